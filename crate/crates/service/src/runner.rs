//! Evolution runs on their own OS threads.
//!
//! A run thread owns its `RunContext` and only looks at its control queue
//! between generations, so pause and stop take effect at generation
//! boundaries. Each record is appended to the store before the matching
//! update is sent.

use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use base64::Engine;
use semswarm_core::evolution::{EvolutionConfig, EvolutionError, RunContext};
use semswarm_core::prompt2param::MappingModel;
use semswarm_core::render::encode_png;
use semswarm_core::semantic::Embedder;
use serde_json::Value;
use tokio::sync::mpsc::UnboundedSender;

use crate::protocol::{ErrorCode, GenerationUpdate, ProtocolError, RunStatus};
use crate::session::RunToken;
use crate::store::{RunStore, StoreError};

/// Upper bounds on client-supplied run settings.
pub const MAX_AGENTS: usize = 20_000;
pub const MAX_SIM_STEPS: usize = 10_000;
pub const MAX_GENERATIONS: usize = 1_000;
pub const MAX_IMAGE_SIZE: usize = 1_024;
pub const MAX_FRAMES: usize = 64;
pub const MAX_POPULATION: usize = 256;

/// Merges a partial config object over `defaults`. The embedder and worker
/// count are server settings and cannot be overridden.
pub fn merge_config(defaults: &EvolutionConfig, overrides: Option<&Value>) -> Result<EvolutionConfig, ProtocolError> {
    let bad = |m: String| ProtocolError::new(ErrorCode::BadPayload, m);
    let mut base = serde_json::to_value(defaults).expect("configs serialize");
    if let Some(o) = overrides {
        merge_value(&mut base, o);
    }
    let mut config: EvolutionConfig = serde_json::from_value(base).map_err(|e| bad(format!("config: {e}")))?;
    config.embedder = defaults.embedder.clone();
    config.workers = defaults.workers;
    let limits = [
        ("n_agents", config.n_agents, MAX_AGENTS),
        ("sim_steps", config.sim_steps, MAX_SIM_STEPS),
        ("generations", config.generations, MAX_GENERATIONS),
        ("image_size", config.image_size, MAX_IMAGE_SIZE),
        ("frames_per_eval", config.frames_per_eval, MAX_FRAMES),
        ("cma.population_size", config.cma.population_size, MAX_POPULATION),
    ];
    for (name, value, max) in limits {
        if value > max {
            return Err(bad(format!("{name} = {value} exceeds the server limit {max}")));
        }
    }
    config.validate().map_err(|e| bad(e.to_string()))?;
    Ok(config)
}

fn merge_value(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[derive(Debug, Clone)]
pub enum Control {
    Pause,
    Resume,
    Refine { prompt: String, in_reply_to: u64 },
    Stop,
}

#[derive(Debug, Clone)]
pub enum Setup {
    Fresh { prompt: String, config: EvolutionConfig },
    Branch { parent_run_id: String, generation: u64, candidate: usize },
}

#[derive(Debug, Clone)]
pub enum RunEvent {
    Started {
        token: RunToken,
        run_id: String,
        of: &'static str,
        in_reply_to: u64,
    },
    Generation {
        token: RunToken,
        update: Box<GenerationUpdate>,
    },
    Refined {
        token: RunToken,
        in_reply_to: u64,
        result: Result<(), ProtocolError>,
    },
    Finished {
        token: RunToken,
        /// `None` when the run never got going.
        run_id: Option<String>,
        status: RunStatus,
        generations: u64,
        error: Option<ProtocolError>,
        /// Seq of the command that started the run, when setup failed.
        setup_reply: Option<u64>,
    },
}

/// What every run on a server shares.
#[derive(Clone)]
pub struct RunShared {
    pub store: RunStore,
    pub mapping: Arc<MappingModel>,
    pub embedder: Arc<dyn Embedder>,
}

pub struct RunHandle {
    pub token: RunToken,
    control: Sender<Control>,
    thread: Option<JoinHandle<()>>,
}

impl RunHandle {
    /// Queues a control message. A run that has already ended ignores it.
    pub fn send(&self, c: Control) {
        let _ = self.control.send(c);
    }

    /// Waits for the run thread to exit.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn is_finished(&self) -> bool {
        self.thread.as_ref().is_none_or(|t| t.is_finished())
    }
}

pub fn spawn_run(
    shared: RunShared,
    token: RunToken,
    setup: Setup,
    in_reply_to: u64,
    events: UnboundedSender<RunEvent>,
) -> RunHandle {
    let (tx, rx) = mpsc::channel();
    let thread = thread::Builder::new()
        .name(format!("run-{token}"))
        .spawn(move || run_thread(shared, token, setup, in_reply_to, rx, events))
        .expect("spawning a run thread");
    RunHandle {
        token,
        control: tx,
        thread: Some(thread),
    }
}

fn evolution_error(e: &EvolutionError) -> ProtocolError {
    let code = if e.is_embed_service_failure() {
        ErrorCode::EmbedFailed
    } else {
        match e {
            EvolutionError::IndexError { .. } => ErrorCode::NotFound,
            EvolutionError::Config(_) => ErrorCode::BadPayload,
            EvolutionError::Semantic(semswarm_core::semantic::SemanticError::EmptyPrompt) => ErrorCode::EmptyPrompt,
            _ => ErrorCode::Internal,
        }
    };
    ProtocolError::new(code, e.to_string())
}

fn store_error(e: &StoreError) -> ProtocolError {
    let code = match e {
        StoreError::NotFound(_) | StoreError::InvalidId(_) => ErrorCode::NotFound,
        _ => ErrorCode::Internal,
    };
    ProtocolError::new(code, e.to_string())
}

fn build_context(shared: &RunShared, setup: Setup) -> Result<(RunContext, &'static str), ProtocolError> {
    let (ctx, of) = match setup {
        Setup::Fresh { prompt, config } => (
            RunContext::new(&prompt, config, &shared.mapping, shared.embedder.clone())
                .map_err(|e| evolution_error(&e))?,
            "start_run",
        ),
        Setup::Branch {
            parent_run_id,
            generation,
            candidate,
        } => {
            let parent = shared.store.load_run(&parent_run_id).map_err(|e| store_error(&e))?;
            (
                RunContext::branch(&parent, generation, candidate, shared.embedder.clone())
                    .map_err(|e| evolution_error(&e))?,
                "branch",
            )
        }
    };
    Ok((ctx, of))
}

fn run_thread(
    shared: RunShared,
    token: RunToken,
    setup: Setup,
    in_reply_to: u64,
    control: Receiver<Control>,
    events: UnboundedSender<RunEvent>,
) {
    let finished = |run_id: Option<String>, status, generations, error, setup_reply| RunEvent::Finished {
        token,
        run_id,
        status,
        generations,
        error,
        setup_reply,
    };
    let (mut ctx, of) = match build_context(&shared, setup) {
        Ok(c) => c,
        Err(e) => {
            let _ = events.send(finished(None, RunStatus::Failed, 0, Some(e), Some(in_reply_to)));
            return;
        }
    };
    // Identical prompt and seed give identical ids; later runs get a suffix.
    // Another session may claim a free id first, hence the loop.
    let base = ctx.history().run_id.clone();
    let mut log = loop {
        ctx.set_run_id(shared.store.unused_id(&base));
        match shared.store.create_live(ctx.history()) {
            Ok(l) => break l,
            Err(StoreError::AlreadyExists(_)) => continue,
            Err(e) => {
                let _ = events.send(finished(None, RunStatus::Failed, 0, Some(store_error(&e)), Some(in_reply_to)));
                return;
            }
        }
    };
    let run_id = ctx.history().run_id.clone();
    let _ = events.send(RunEvent::Started {
        token,
        run_id: run_id.clone(),
        of,
        in_reply_to,
    });

    let generations = ctx.config().generations as u64;
    let mut paused = false;
    let (status, error) = 'run: loop {
        loop {
            let next = if paused {
                control.recv().unwrap_or(Control::Stop)
            } else {
                match control.try_recv() {
                    Ok(c) => c,
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => Control::Stop,
                }
            };
            match next {
                Control::Pause => paused = true,
                Control::Resume => paused = false,
                Control::Stop => break 'run (RunStatus::Stopped, None),
                Control::Refine { prompt, in_reply_to } => {
                    let result = ctx.refine_prompt(&prompt, &shared.mapping).map_err(|e| evolution_error(&e));
                    if result.is_ok() {
                        let rev = ctx.history().prompt_revisions.last().expect("just revised");
                        if let Err(e) = log.revision(rev) {
                            break 'run (RunStatus::Failed, Some(store_error(&e.into())));
                        }
                    }
                    let _ = events.send(RunEvent::Refined {
                        token,
                        in_reply_to,
                        result,
                    });
                }
            }
        }
        if ctx.generation() >= generations {
            break (RunStatus::Completed, None);
        }
        let record = match ctx.run_generation() {
            Ok(r) => r.clone(),
            Err(e) => break (RunStatus::Failed, Some(evolution_error(&e))),
        };
        if let Err(e) = log.record(&record) {
            break (RunStatus::Failed, Some(store_error(&e.into())));
        }
        let png = ctx.last_best_frame().map(encode_png).unwrap_or_default();
        let update = GenerationUpdate {
            run_id: run_id.clone(),
            generation: record.generation,
            best_loss: record.best_loss,
            best_so_far_loss: record.best_so_far_loss,
            candidate_losses: record.candidate_losses,
            diversity: record.diversity,
            sigma: record.sigma,
            noise_injected: record.noise_injected,
            best_params: record.best_params,
            frame_png: base64::engine::general_purpose::STANDARD.encode(png),
        };
        let _ = events.send(RunEvent::Generation {
            token,
            update: Box::new(update),
        });
    };
    if let Some(e) = &error {
        tracing::warn!(run_id = %run_id, error = %e, "run failed");
    }
    let _ = events.send(finished(Some(run_id), status, ctx.generation(), error, None));
}
