use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use semswarm_core::evolution::runlog::RunLogWriter;
use semswarm_core::evolution::{EmbedderChoice, EvolutionConfig, EvolutionError, RunContext};
use semswarm_core::prompt2param::{train_mapping, MappingError, PromptParamDataset, DEFAULT_RIDGE_LAMBDA};
use semswarm_core::semantic::SemanticError;
use semswarm_service::ecosystem::EcosystemConfig;
use semswarm_service::{ServerConfig, EMBED_ENDPOINT_ENV};

const EXIT_CONFIG: u8 = 2;
const EXIT_EMBED: u8 = 3;

#[derive(Parser)]
#[command(name = "semswarm", version, about = "Evolve swarm behaviours from text prompts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one headless evolution and write its JSON-lines log.
    Evolve(EvolveArgs),
    /// Serve the WebSocket/HTTP session API and the shared ecosystem.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderKind {
    Oracle,
    Remote,
}

#[derive(clap::Args)]
struct EvolveArgs {
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 30)]
    generations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "oracle")]
    embedder: EmbedderKind,
    /// Embedding service base URL, required with `--embedder remote`.
    #[arg(long, env = EMBED_ENDPOINT_ENV)]
    endpoint: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    agents: Option<usize>,
    /// Simulation steps per evaluation.
    #[arg(long)]
    steps: Option<usize>,
    /// Frames scored per evaluation.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Evaluation threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Suppress per-generation progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Directory holding one `{run_id}.jsonl` per run.
    #[arg(long, default_value = "runs")]
    store: PathBuf,
    /// Embedding service base URL; the oracle embedder is used when absent.
    #[arg(long, env = EMBED_ENDPOINT_ENV)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = semswarm_core::ecosystem::DEFAULT_CAPACITY)]
    ecosystem_capacity: usize,
    /// Ecosystem steps per second.
    #[arg(long, default_value_t = 30.0)]
    ecosystem_rate: f64,
    #[arg(long, default_value_t = 0)]
    ecosystem_seed: u64,
    /// Agents per admitted lifeform unless the client asks otherwise.
    #[arg(long, default_value_t = 500)]
    admit_agents: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Evolve(args) => evolve(args),
        Command::Serve(args) => serve(args),
    }
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn embed_failure(e: &SemanticError) -> bool {
    matches!(e, SemanticError::EmbedServiceError { .. } | SemanticError::ProtocolError(_))
}

/// Exit code for an error raised while setting up or running evolution.
/// A malformed reply from the embedding service counts as a service failure.
fn evolution_exit(e: &EvolutionError) -> u8 {
    if e.is_embed_service_failure() {
        return EXIT_EMBED;
    }
    match e {
        EvolutionError::Semantic(SemanticError::ProtocolError(_))
        | EvolutionError::Mapping(MappingError::Semantic(SemanticError::ProtocolError(_))) => EXIT_EMBED,
        EvolutionError::Semantic(SemanticError::EmptyPrompt)
        | EvolutionError::Config(_)
        | EvolutionError::Render(_)
        | EvolutionError::Cma(_) => EXIT_CONFIG,
        _ => 1,
    }
}

fn evolve(args: EvolveArgs) -> ExitCode {
    let embedder = match (args.embedder, args.endpoint) {
        (EmbedderKind::Oracle, _) => EmbedderChoice::Oracle,
        (EmbedderKind::Remote, Some(endpoint)) if !endpoint.trim().is_empty() => EmbedderChoice::Remote { endpoint },
        (EmbedderKind::Remote, _) => return fail(EXIT_CONFIG, "--embedder remote needs --endpoint"),
    };
    let defaults = EvolutionConfig::default();
    let config = EvolutionConfig {
        n_agents: args.agents.unwrap_or(defaults.n_agents),
        sim_steps: args.steps.unwrap_or(defaults.sim_steps),
        frames_per_eval: args.frames.unwrap_or(defaults.frames_per_eval),
        image_size: args.image_size.unwrap_or(defaults.image_size),
        generations: args.generations,
        workers: args.workers,
        run_seed: args.seed,
        embedder,
        ..defaults
    };
    if let Err(e) = config.validate() {
        return fail(EXIT_CONFIG, e);
    }
    if args.prompt.trim().is_empty() {
        return fail(EXIT_CONFIG, "prompt is empty");
    }

    let embedder = config.embedder.build();
    let mapping = match train_mapping(&PromptParamDataset::bundled(), &*embedder, DEFAULT_RIDGE_LAMBDA) {
        Ok(m) => m,
        Err(MappingError::Semantic(s)) if embed_failure(&s) => return fail(EXIT_EMBED, s),
        Err(e) => return fail(1, format!("training the prompt mapping: {e}")),
    };
    let mut ctx = match RunContext::new(&args.prompt, config, &mapping, Arc::clone(&embedder)) {
        Ok(c) => c,
        Err(e) => return fail(evolution_exit(&e), e),
    };
    let file = match File::create(&args.out) {
        Ok(f) => f,
        Err(e) => return fail(1, format!("{}: {e}", args.out.display())),
    };
    let mut log = match RunLogWriter::start(BufWriter::new(file), ctx.history()) {
        Ok(l) => l,
        Err(e) => return fail(1, e),
    };

    for _ in 0..args.generations {
        let record = match ctx.run_generation() {
            Ok(r) => r,
            Err(e) => {
                eprintln!("stopped after {} generations; partial log kept", ctx.generation());
                return fail(evolution_exit(&e), e);
            }
        };
        if let Err(e) = log.record(record) {
            return fail(1, e);
        }
        if !args.quiet {
            eprintln!(
                "gen {:>3}/{}  best {:.5}  best-so-far {:.5}  sigma {:.4}  diversity {:.4}{}  {} ms",
                record.generation + 1,
                args.generations,
                record.best_loss,
                record.best_so_far_loss,
                record.sigma,
                record.diversity,
                if record.noise_injected { " (noise)" } else { "" },
                record.wall_ms,
            );
        }
    }
    if let Err(e) = log.into_inner().flush() {
        return fail(1, e);
    }
    println!("{}  {}", ctx.history().run_id, args.out.display());
    ExitCode::SUCCESS
}

fn serve(args: ServeArgs) -> ExitCode {
    tracing_subscriber::fmt().with_target(false).init();
    let embedder = match args.endpoint {
        Some(endpoint) if !endpoint.trim().is_empty() => EmbedderChoice::Remote { endpoint },
        _ => EmbedderChoice::Oracle,
    };
    if !(args.ecosystem_rate >= 0.0 && args.ecosystem_rate.is_finite()) {
        return fail(EXIT_CONFIG, "--ecosystem-rate must be a non-negative number");
    }
    let config = ServerConfig {
        bind: args.bind,
        store_dir: args.store,
        embedder,
        ecosystem: EcosystemConfig {
            capacity: args.ecosystem_capacity,
            seed: args.ecosystem_seed,
            steps_per_second: args.ecosystem_rate,
        },
        admit_agents: args.admit_agents,
        ..ServerConfig::default()
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return fail(1, e),
    };
    match runtime.block_on(semswarm_service::serve(config)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(1, e),
    }
}
