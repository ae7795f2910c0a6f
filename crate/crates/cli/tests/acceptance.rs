//! Acceptance suite. Prints one PASS/FAIL line per criterion with the
//! measured numbers. Exits non-zero on failure only when
//! `SEMSWARM_ACCEPTANCE_STRICT=1`, so the workspace test run reports
//! results without hiding the rest of the suite.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use semswarm_core::cmaes::{decode_params, normalized_distance2, CmaConfig, CmaState};
use semswarm_core::ecosystem::{kmeans, pca, EcosystemWorld};
use semswarm_core::evolution::runlog::run_log_string;
use semswarm_core::evolution::{EvolutionConfig, RunContext, RunHistory};
use semswarm_core::prompt2param::{train_mapping, MappingModel, PromptEncoding, PromptParamDataset, DEFAULT_RIDGE_LAMBDA};
use semswarm_core::rng::rng_from_seed;
use semswarm_core::semantic::oracle::mean_nearest_neighbor_distance;
use semswarm_core::semantic::{Embedding, OracleEmbedder, EMBEDDING_DIM};
use semswarm_core::swarm::{neighbors_within, run_simulation, torus_dist2, validate_params, AgentState, SwarmParams, SwarmWorld};
use semswarm_service::model_check::explore;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn mapping() -> MappingModel {
    train_mapping(&PromptParamDataset::bundled(), &OracleEmbedder, DEFAULT_RIDGE_LAMBDA).expect("bundled mapping trains")
}

// ---------------------------------------------------------------- optimizer

fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

/// Evaluations until `target` is beaten (or `budget` spent) and the best loss.
fn minimize(f: fn(&[f64]) -> f64, start: Vec<f64>, sigma0: f64, seed: u64, budget: usize, target: f64) -> (usize, f64) {
    let cfg = CmaConfig {
        dimension: start.len(),
        sigma0,
        sigma_max: 1e3,
        seed,
        ..CmaConfig::default()
    };
    let mut state = CmaState::new(start, cfg).expect("valid optimizer config");
    let mut evals = 0;
    while evals < budget {
        let points = state.ask().expect("ask");
        let losses: Vec<f64> = points.iter().map(|p| f(p)).collect();
        evals += losses.len();
        state.tell(&points, &losses).expect("tell");
        if state.best_so_far.as_ref().expect("told once").loss < target {
            break;
        }
    }
    (evals, state.best_so_far.expect("told once").loss)
}

fn cma_sphere() -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=5 {
        // Run past the budget so the report shows how far off a miss is.
        let (evals, best) = minimize(sphere, vec![3.0; 10], 1.0, seed, 4_000, 1e-10);
        let (_, at_budget) = minimize(sphere, vec![3.0; 10], 1.0, seed, 2_000, 1e-10);
        pass &= at_budget < 1e-10;
        parts.push(format!("seed {seed}: {at_budget:.1e} at 2000, 1e-10 after {evals} ({best:.1e})"));
    }
    let elapsed = t.elapsed();
    pass &= elapsed < Duration::from_secs(5);
    outcome(pass, format!("{}; {}", parts.join("; "), secs(elapsed)))
}

fn cma_rosenbrock() -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let (evals, best) = minimize(rosenbrock, vec![0.0; 5], 0.5, seed, 30_000, 1e-6);
        pass &= best < 1e-6;
        parts.push(format!("seed {seed}: {best:.1e} after {evals}"));
    }
    let elapsed = t.elapsed();
    pass &= elapsed < Duration::from_secs(30);
    outcome(pass, format!("{}; {}", parts.join("; "), secs(elapsed)))
}

// ---------------------------------------------------------------- evolution

fn final_nn_distance(params: &SwarmParams, config: &EvolutionConfig) -> f64 {
    // A seed no evaluation used, so this is an independent re-simulation.
    let t = run_simulation(params, config.n_agents, config.sim_steps, 0x5EED_0C1C).expect("valid params");
    let last = t.frames.last().expect("at least one frame");
    mean_nearest_neighbor_distance(&last.iter().map(|a| a.position).collect::<Vec<_>>())
}

fn closed_loop(mapping: &MappingModel) -> (Outcome, Option<RunHistory>) {
    let config = EvolutionConfig {
        generations: 20,
        n_agents: 512,
        run_seed: 42,
        ..EvolutionConfig::default()
    };
    let t = Instant::now();
    let mut ctx = match RunContext::new("cluster", config.clone(), mapping, Arc::new(OracleEmbedder)) {
        Ok(c) => c,
        Err(e) => return (outcome(false, format!("setup failed: {e}")), None),
    };
    for _ in 0..20 {
        if let Err(e) = ctx.run_generation() {
            return (outcome(false, format!("generation failed: {e}")), None);
        }
    }
    let elapsed = t.elapsed();
    let h = ctx.into_history();
    let curve = h.best_so_far_curve();
    let decreases = curve.windows(2).filter(|w| w[1] < w[0]).count();
    let best = h
        .records
        .iter()
        .min_by(|a, b| a.best_loss.total_cmp(&b.best_loss))
        .expect("20 records");
    let nn0 = final_nn_distance(&h.records[0].best_params, &config);
    let nn_final = final_nn_distance(&best.best_params, &config);
    let ratio = nn_final / nn0;
    let pass = decreases >= 5 && ratio <= 0.5 && elapsed < Duration::from_secs(120);
    let detail = format!(
        "{decreases} strict decreases (need 5), NN distance {nn_final:.4} vs gen-0 {nn0:.4} = {:.1}% (need <= 50%), loss {:.4} -> {:.4}, {}",
        ratio * 100.0,
        curve[0],
        curve[curve.len() - 1],
        secs(elapsed)
    );
    (outcome(pass, detail), Some(h))
}

fn population_size(history: Option<&RunHistory>) -> Outcome {
    let default_lambda = EvolutionConfig::default().cma.population_size;
    let Some(h) = history else {
        return outcome(false, "closed-loop run unavailable".into());
    };
    let sizes: Vec<usize> = h.records.iter().map(|r| r.candidate_losses.len()).collect();
    let params_ok = h.records.iter().all(|r| r.candidate_params.len() == r.candidate_losses.len());
    let pass = default_lambda == 16 && params_ok && sizes.iter().all(|&s| s == 16);
    outcome(
        pass,
        format!("default lambda {default_lambda}; candidates per generation over {} generations: {:?}", sizes.len(), sizes),
    )
}

fn determinism(mapping: &MappingModel) -> Outcome {
    let config = EvolutionConfig {
        generations: 3,
        run_seed: 7,
        ..EvolutionConfig::default()
    };
    let run = |workers: usize| -> Result<String, String> {
        let mut ctx = RunContext::new("swirl", EvolutionConfig { workers, ..config.clone() }, mapping, Arc::new(OracleEmbedder))
            .map_err(|e| e.to_string())?;
        for _ in 0..config.generations {
            ctx.run_generation().map_err(|e| e.to_string())?;
        }
        let mut h = ctx.into_history().without_timing();
        // The worker count is recorded in the header; only the results
        // have to agree across it.
        h.config.workers = config.workers;
        h.run_id = "determinism".into();
        Ok(run_log_string(&h))
    };
    match (run(0), run(0), run(1)) {
        (Ok(a), Ok(b), Ok(serial)) => {
            let pass = a == b && a == serial;
            outcome(
                pass,
                format!(
                    "{} generations of default config, {} log bytes; repeat identical: {}, serial identical: {}",
                    config.generations,
                    a.len(),
                    a == b,
                    a == serial
                ),
            )
        }
        (a, b, c) => outcome(false, format!("run failed: {:?}", [a.err(), b.err(), c.err()])),
    }
}

fn drift_from_prior(prior_lambda: f64, seed: u64) -> f64 {
    // "cluster" wants tight cohesion; this prior asks for a dispersed swarm.
    let prior = validate_params(&[0.05, 0.05, 0.2, 0.0, 2.0, 0.04]).expect("in bounds").params;
    let encoding = PromptEncoding {
        theta_init: prior,
        theta_prompt: prior.to_array(),
    };
    let mut config = EvolutionConfig {
        n_agents: 96,
        sim_steps: 60,
        generations: 12,
        image_size: 64,
        run_seed: seed,
        ..EvolutionConfig::default()
    };
    config.cma.prior_lambda = prior_lambda;
    let mut ctx = RunContext::with_encoding("cluster", encoding, config, Arc::new(OracleEmbedder)).expect("valid run");
    for _ in 0..12 {
        ctx.run_generation().expect("generation");
    }
    normalized_distance2(&decode_params(&ctx.state().mean), &prior.to_array())
}

fn prior_effect() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let free = drift_from_prior(0.0, seed);
        let anchored = drift_from_prior(0.5, seed);
        pass &= anchored <= free;
        parts.push(format!("seed {seed}: {anchored:.4} at 0.5 vs {free:.4} at 0"));
    }
    outcome(pass, format!("squared normalized distance to prior; {}", parts.join("; ")))
}

// ---------------------------------------------------------------- geometry

fn neighbor_oracle() -> Outcome {
    let mut rng = rng_from_seed(2024);
    let mut mismatches = 0;
    let mut checked_pairs = 0usize;
    for case in 0..1000 {
        let n = rng.random_range(1..=300);
        let clumped = case % 3 == 0;
        let positions: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                if clumped {
                    [(0.97 + 0.06 * rng.random::<f64>()) % 1.0, (0.5 + 0.05 * rng.random::<f64>()) % 1.0]
                } else {
                    [rng.random(), rng.random()]
                }
            })
            .collect();
        let radius = match case % 4 {
            0 => rng.random_range(1e-4..0.02),
            1 => rng.random_range(0.02..0.15),
            2 => rng.random_range(0.15..0.5),
            _ => rng.random_range(0.5..0.75),
        };
        let world = SwarmWorld {
            agents: positions.iter().map(|&position| AgentState { position, velocity: [0.0; 2] }).collect(),
            rng: rng_from_seed(0),
            step_count: 0,
        };
        let i = rng.random_range(0..n);
        let brute: Vec<usize> = (0..n)
            .filter(|&j| j != i && torus_dist2(positions[i], positions[j]) < radius * radius)
            .collect();
        checked_pairs += n;
        if neighbors_within(&world, i, radius).ok() != Some(brute) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("1000 cases, {checked_pairs} candidate pairs, {mismatches} mismatches"))
}

fn random_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    let mix: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            (0..d).map(|i| (0..d).map(|k| mix[i * d + k] * z[k]).sum()).collect()
        })
        .collect()
}

fn pca_kmeans() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let rows = random_rows(seed, 40, 6);
        let Ok(ours) = pca(&rows, 6) else {
            return outcome(false, format!("pca failed on seed {seed}"));
        };
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..6).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let cov = DMatrix::from_fn(6, 6, |i, j| {
            rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0)
        });
        let mut want: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
        want.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in ours.eigenvalues.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }

    let noise = Normal::new(0.0, 0.01).expect("valid sigma");
    let mut label_errors = 0;
    for seed in 0..20 {
        let mut rng = rng_from_seed(seed);
        let centres = [[0.25, 0.5], [0.75, 0.5]];
        let (data, truth): (Vec<Vec<f64>>, Vec<usize>) = (0..100)
            .map(|i| {
                let c = i % 2;
                (vec![centres[c][0] + noise.sample(&mut rng), centres[c][1] + noise.sample(&mut rng)], c)
            })
            .unzip();
        let Ok(km) = kmeans(&data, 2, seed) else {
            return outcome(false, format!("k-means failed on seed {seed}"));
        };
        let agree = km.assignments.iter().zip(&truth).filter(|(a, t)| a == t).count();
        label_errors += agree.min(100 - agree);
    }
    outcome(
        worst < 1e-8 && label_errors == 0,
        format!("100 covariances, worst eigenvalue gap {worst:.1e} (need < 1e-8); k-means 20 seeds, {label_errors} label errors"),
    )
}

// ---------------------------------------------------------------- ecosystem

fn ecosystem_throughput() -> Outcome {
    let mut world = EcosystemWorld::new(10_000, 1);
    for k in 0..4 {
        if let Err(e) = world.admit_lifeform(&SwarmParams::default(), Embedding::basis(EMBEDDING_DIM, k), "bench", 2_500) {
            return outcome(false, format!("admission failed: {e}"));
        }
    }
    for _ in 0..30 {
        world.step().expect("step");
    }
    let steps = 150;
    let t = Instant::now();
    for _ in 0..steps {
        world.step().expect("step");
    }
    let elapsed = t.elapsed();
    let rate = steps as f64 / elapsed.as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    outcome(
        rate >= 30.0,
        format!(
            "{} agents, {rate:.1} steps/s over {steps} steps (need >= 30 on 4 cores; this machine has {cores})",
            world.len()
        ),
    )
}

// ---------------------------------------------------------------- service

fn service_state_machine() -> Outcome {
    let t = Instant::now();
    match explore(6) {
        Ok(stats) => outcome(
            true,
            format!(
                "{} sequences up to length 6, {} rejected transitions, {} refine-while-running attempts all refused, {}",
                stats.sequences,
                stats.rejected,
                stats.refines_while_running,
                secs(t.elapsed())
            ),
        ),
        Err(e) => outcome(false, e),
    }
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    let mapping = mapping();

    report("cma-sphere-10d", cma_sphere());
    report("cma-rosenbrock-5d", cma_rosenbrock());
    let (loop_outcome, history) = closed_loop(&mapping);
    report("closed-loop-cluster", loop_outcome);
    report("population-16", population_size(history.as_ref()));
    report("determinism", determinism(&mapping));
    report("neighbor-oracle", neighbor_oracle());
    report("pca-kmeans-oracles", pca_kmeans());
    report("ecosystem-throughput", ecosystem_throughput());
    report("prior-effect", prior_effect());
    report("service-state-machine", service_state_machine());

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {} passed, {} failed", results.len() - failed.len(), failed.len());
    if !failed.is_empty() && std::env::var("SEMSWARM_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
