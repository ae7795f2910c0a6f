//! The closed optimization loop.
//!
//! A [`RunContext`] owns one search: the optimizer state, the prompt
//! embedding it is scored against, and the growing [`RunHistory`]. Each call
//! to [`RunContext::run_generation`] samples candidates, simulates and renders
//! each one, embeds the selected frames, scores them against the prompt, and
//! feeds the penalized losses back to the optimizer.
//!
//! Every candidate simulation is seeded from `(run_seed, generation, index)`,
//! so with a deterministic embedder a whole run is reproducible bit for bit.
//! Candidate evaluations run in parallel, but results are collected in
//! sampling order, so the optimizer sees the same inputs either way.

mod history;
pub mod runlog;

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cmaes::{
    apply_diversity_noise, cma_ask, cma_init, cma_tell, encode_params_nudged, population_diversity,
    prior_penalized_fitness, Candidate, CmaConfig, CmaError, CmaState,
};
use crate::prompt2param::{MappingError, MappingModel, PromptEncoding};
use crate::render::{
    render_selected, select_frame_indices, ImageRGB, RenderError, DEFAULT_IMAGE_SIZE, DEFAULT_TRAIL_DECAY,
};
use crate::rng::{derive_seed, RNG_ALGORITHM_ID};
use crate::semantic::{
    cosine_similarity, semantic_loss, Embedder, Embedding, FrameInput, OracleEmbedder, RemoteConfig, RemoteEmbedder,
    SemanticError, SemanticScore, EMBEDDING_DIM,
};
use crate::swarm::{run_simulation, SwarmError, SwarmParams, PARAM_DIM};

pub use history::{BranchOrigin, GenerationRecord, PromptRevision, RunHistory};

/// Seed-derivation stream for the optimizer's own sampling.
const CMA_STREAM: u64 = 0xC3A0_0001;
/// Seed-derivation stream for branches.
const BRANCH_STREAM: u64 = 0xB4A0_0002;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no candidate {candidate_index} in generation {generation}")]
    IndexError { generation: u64, candidate_index: usize },
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Cma(#[from] CmaError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Swarm(#[from] SwarmError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

impl EvolutionError {
    /// True when the root cause is the embedding service giving up.
    pub fn is_embed_service_failure(&self) -> bool {
        let semantic = match self {
            EvolutionError::Semantic(e) => e,
            EvolutionError::Mapping(MappingError::Semantic(e)) => e,
            EvolutionError::Cma(CmaError::Semantic(e)) => e,
            _ => return false,
        };
        matches!(semantic, SemanticError::EmbedServiceError { .. })
    }
}

/// Which embedding provider scores the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderChoice {
    #[default]
    Oracle,
    Remote { endpoint: String },
}

impl EmbedderChoice {
    pub fn build(&self) -> Arc<dyn Embedder> {
        match self {
            EmbedderChoice::Oracle => Arc::new(OracleEmbedder),
            EmbedderChoice::Remote { endpoint } => Arc::new(RemoteEmbedder::new(RemoteConfig::new(endpoint.clone()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub n_agents: usize,
    pub sim_steps: usize,
    pub frames_per_eval: usize,
    pub generations: usize,
    pub image_size: usize,
    pub trail_decay: f32,
    /// Threads for candidate evaluation: 0 uses the global pool, 1 is serial.
    pub workers: usize,
    pub cma: CmaConfig,
    pub embedder: EmbedderChoice,
    pub run_seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            n_agents: 512,
            sim_steps: 240,
            frames_per_eval: 3,
            generations: 30,
            image_size: DEFAULT_IMAGE_SIZE,
            trail_decay: DEFAULT_TRAIL_DECAY,
            workers: 0,
            cma: CmaConfig::default(),
            embedder: EmbedderChoice::Oracle,
            run_seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let positive = [
            ("n_agents", self.n_agents),
            ("sim_steps", self.sim_steps),
            ("frames_per_eval", self.frames_per_eval),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(EvolutionError::Config(format!("{name} must be positive")));
        }
        if self.n_agents < 2 {
            return Err(EvolutionError::Config("n_agents must be at least 2".into()));
        }
        if self.image_size < crate::render::MIN_IMAGE_SIZE {
            return Err(RenderError::ImageTooSmall(self.image_size).into());
        }
        if !(0.0..=1.0).contains(&self.trail_decay) {
            return Err(EvolutionError::Config("trail_decay must lie in [0, 1]".into()));
        }
        if let EmbedderChoice::Remote { endpoint } = &self.embedder {
            if endpoint.trim().is_empty() {
                return Err(EvolutionError::Config("remote embedder needs an endpoint".into()));
            }
        }
        self.cma.validate()?;
        if self.cma.dimension != PARAM_DIM {
            return Err(EvolutionError::Config(format!("cma.dimension must be {PARAM_DIM}")));
        }
        Ok(())
    }
}

/// Everything known about one scored candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Prior-penalized loss, the value handed to the optimizer.
    pub loss: f64,
    pub semantic: SemanticScore,
    /// Embedding of the selected frame closest to the prompt.
    pub best_frame_embedding: Embedding,
    /// Trajectory index of that frame.
    pub best_frame_index: usize,
    /// The frame as rendered, when the embedder needed pixels.
    pub best_frame: Option<ImageRGB>,
}

/// First eight bytes of the SHA-256 of the raw pixels, big-endian.
pub fn frame_digest(image: &ImageRGB) -> u64 {
    let hash = Sha256::digest(&image.pixels);
    let mut head = [0u8; 8];
    head.copy_from_slice(&hash[..8]);
    u64::from_be_bytes(head)
}

/// Simulation seed of candidate `index` in `generation`.
pub fn eval_seed(run_seed: u64, generation: u64, index: usize) -> u64 {
    derive_seed(run_seed, &[generation, index as u64])
}

/// Simulates, renders, embeds and scores one candidate. Frames are only
/// rasterized when the embedder reads pixels.
pub fn evaluate_candidate(
    candidate: &Candidate,
    prompt_embedding: &Embedding,
    theta_prompt: &[f64; PARAM_DIM],
    config: &EvolutionConfig,
    eval_seed: u64,
    embedder: &dyn Embedder,
) -> Result<Evaluation, EvolutionError> {
    let params = candidate.params;
    let trajectory = run_simulation(&params, config.n_agents, config.sim_steps, eval_seed)?;
    let selected = select_frame_indices(trajectory.len(), config.frames_per_eval)?;
    let images = if embedder.needs_image() {
        Some(render_selected(&trajectory, &selected, config.image_size, config.trail_decay)?)
    } else {
        None
    };

    let mut embeddings = Vec::with_capacity(selected.len());
    for (k, &idx) in selected.iter().enumerate() {
        let input = FrameInput {
            agents: &trajectory.frames[idx],
            max_speed: params.max_speed,
            image: images.as_ref().map(|v| &v[k]),
        };
        embeddings.push(embedder.embed_frame(&input)?);
    }
    let semantic = semantic_loss(&embeddings, prompt_embedding)?;

    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (k, e) in embeddings.iter().enumerate() {
        let s = cosine_similarity(e, prompt_embedding)?;
        if s > best_sim {
            best_sim = s;
            best = k;
        }
    }
    Ok(Evaluation {
        loss: prior_penalized_fitness(semantic.loss, &params, theta_prompt, config.cma.prior_lambda),
        semantic,
        best_frame_embedding: embeddings.swap_remove(best),
        best_frame_index: selected[best],
        best_frame: images.and_then(|v| v.into_iter().nth(best)),
    })
}

/// Re-simulates a candidate and renders one frame exactly as the evaluation
/// pipeline would.
pub fn render_candidate_frame(
    params: &SwarmParams,
    config: &EvolutionConfig,
    eval_seed: u64,
    frame_index: usize,
) -> Result<ImageRGB, EvolutionError> {
    let trajectory = run_simulation(params, config.n_agents, config.sim_steps, eval_seed)?;
    if frame_index >= trajectory.len() {
        return Err(EvolutionError::Config(format!("frame {frame_index} is past the end of the run")));
    }
    let mut images = render_selected(&trajectory, &[frame_index], config.image_size, config.trail_decay)?;
    Ok(images.remove(0))
}

/// Scores a whole population. Results are in candidate order whether or not
/// the work is spread over threads.
pub fn evaluate_population(
    candidates: &[Candidate],
    prompt_embedding: &Embedding,
    theta_prompt: &[f64; PARAM_DIM],
    config: &EvolutionConfig,
    generation: u64,
    embedder: &dyn Embedder,
    parallel: bool,
) -> Result<Vec<Evaluation>, EvolutionError> {
    let one = |(i, c): (usize, &Candidate)| {
        evaluate_candidate(
            c,
            prompt_embedding,
            theta_prompt,
            config,
            eval_seed(config.run_seed, generation, i),
            embedder,
        )
    };
    if parallel {
        candidates.par_iter().enumerate().map(one).collect()
    } else {
        candidates.iter().enumerate().map(one).collect()
    }
}

/// A fresh optimizer state centred on one recorded candidate: half the
/// initial step size, identity covariance, and a seed derived from the
/// candidate's position in the parent run.
pub fn branch_from(
    history: &RunHistory,
    generation: u64,
    candidate_index: usize,
) -> Result<(CmaState, BranchOrigin), EvolutionError> {
    let missing = EvolutionError::IndexError {
        generation,
        candidate_index,
    };
    let record = history.record(generation).ok_or(missing.clone())?;
    let params = record.candidate_params.get(candidate_index).ok_or(missing)?;
    let seed = branch_seed(history.config.run_seed, generation, candidate_index);
    let cma = CmaConfig {
        seed,
        ..history.config.cma.clone()
    };
    let mut state = cma_init(params, &cma)?;
    state.sigma = (0.5 * cma.sigma0).min(cma.sigma_max);
    Ok((
        state,
        BranchOrigin {
            parent_run_id: history.run_id.clone(),
            generation,
            candidate_index,
        },
    ))
}

fn branch_seed(run_seed: u64, generation: u64, candidate_index: usize) -> u64 {
    derive_seed(run_seed, &[BRANCH_STREAM, generation, candidate_index as u64])
}

/// Stable identifier of a run: hex of the first eight bytes of a hash over
/// the prompt, seed and parent linkage.
pub fn run_id(prompt: &str, run_seed: u64, parent: Option<&BranchOrigin>) -> String {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update([0]);
    h.update(run_seed.to_le_bytes());
    if let Some(p) = parent {
        h.update(p.parent_run_id.as_bytes());
        h.update(p.generation.to_le_bytes());
        h.update((p.candidate_index as u64).to_le_bytes());
    }
    let d = h.finalize();
    d[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn embed_prompt(embedder: &dyn Embedder, prompt: &str) -> Result<Embedding, EvolutionError> {
    if prompt.trim().is_empty() {
        return Err(SemanticError::EmptyPrompt.into());
    }
    let e = embedder.embed_text(prompt)?;
    if e.dim() != EMBEDDING_DIM {
        return Err(SemanticError::DimensionError {
            expected: EMBEDDING_DIM,
            got: e.dim(),
        }
        .into());
    }
    Ok(e)
}

/// One live search.
pub struct RunContext {
    config: EvolutionConfig,
    embedder: Arc<dyn Embedder>,
    state: CmaState,
    prompt_embedding: Embedding,
    history: RunHistory,
    previous_best: Option<Embedding>,
    last_best_frame: Option<ImageRGB>,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for RunContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunContext")
            .field("run_id", &self.history.run_id)
            .field("generation", &self.state.generation)
            .field("embedder", &self.embedder.name())
            .finish_non_exhaustive()
    }
}

impl RunContext {
    /// Encodes `prompt` through `mapping` and starts the optimizer at the
    /// mapped parameters.
    pub fn new(
        prompt: &str,
        config: EvolutionConfig,
        mapping: &MappingModel,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, EvolutionError> {
        config.validate()?;
        let embedding = embed_prompt(&*embedder, prompt)?;
        let theta_init = mapping.predict(&embedding)?;
        let encoding = PromptEncoding {
            theta_init,
            theta_prompt: theta_init.to_array(),
        };
        Self::assemble(prompt, encoding, embedding, config, embedder)
    }

    /// Starts from an encoding computed elsewhere.
    pub fn with_encoding(
        prompt: &str,
        encoding: PromptEncoding,
        config: EvolutionConfig,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, EvolutionError> {
        config.validate()?;
        let embedding = embed_prompt(&*embedder, prompt)?;
        Self::assemble(prompt, encoding, embedding, config, embedder)
    }

    fn assemble(
        prompt: &str,
        encoding: PromptEncoding,
        prompt_embedding: Embedding,
        config: EvolutionConfig,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, EvolutionError> {
        let cma = CmaConfig {
            seed: derive_seed(config.run_seed, &[CMA_STREAM, config.cma.seed]),
            ..config.cma.clone()
        };
        let state = cma_init(&encoding.theta_init, &cma)?;
        let history = RunHistory {
            run_id: run_id(prompt, config.run_seed, None),
            prompt: prompt.to_string(),
            prompt_revisions: Vec::new(),
            theta_prompt: encoding.theta_prompt,
            records: Vec::new(),
            config: config.clone(),
            rng_algorithm_id: RNG_ALGORITHM_ID.to_string(),
            embedder: embedder.name().to_string(),
            parent: None,
        };
        Ok(RunContext {
            pool: build_pool(config.workers)?,
            config,
            embedder,
            state,
            prompt_embedding,
            history,
            previous_best: None,
            last_best_frame: None,
        })
    }

    /// Starts a child run from candidate `candidate_index` of `generation` in
    /// `parent`. The child inherits the parent's current prompt and prior and
    /// gets its own derived run seed.
    pub fn branch(
        parent: &RunHistory,
        generation: u64,
        candidate_index: usize,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, EvolutionError> {
        let (state, origin) = branch_from(parent, generation, candidate_index)?;
        let mut config = parent.config.clone();
        config.run_seed = branch_seed(parent.config.run_seed, generation, candidate_index);
        config.validate()?;
        let prompt = parent.current_prompt().to_string();
        let prompt_embedding = embed_prompt(&*embedder, &prompt)?;
        let history = RunHistory {
            run_id: run_id(&prompt, config.run_seed, Some(&origin)),
            prompt,
            prompt_revisions: Vec::new(),
            theta_prompt: parent.current_theta_prompt(),
            records: Vec::new(),
            config: config.clone(),
            rng_algorithm_id: RNG_ALGORITHM_ID.to_string(),
            embedder: embedder.name().to_string(),
            parent: Some(origin),
        };
        Ok(RunContext {
            pool: build_pool(config.workers)?,
            config,
            embedder,
            state,
            prompt_embedding,
            history,
            previous_best: None,
            last_best_frame: None,
        })
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.config
    }

    pub fn state(&self) -> &CmaState {
        &self.state
    }

    pub fn history(&self) -> &RunHistory {
        &self.history
    }

    /// Relabels the run. The id is not an input to any computation, so this
    /// only matters to whoever stores the history.
    pub fn set_run_id(&mut self, run_id: impl Into<String>) {
        self.history.run_id = run_id.into();
    }

    pub fn into_history(self) -> RunHistory {
        self.history
    }

    pub fn prompt_embedding(&self) -> &Embedding {
        &self.prompt_embedding
    }

    pub fn generation(&self) -> u64 {
        self.state.generation
    }

    /// Rendered best frame of the most recent generation's best candidate.
    pub fn last_best_frame(&self) -> Option<&ImageRGB> {
        self.last_best_frame.as_ref()
    }

    /// Runs one generation and appends its record. On error the optimizer
    /// state and history are left as they were. A generation that fails
    /// because the embedding service gave up is retried once.
    pub fn run_generation(&mut self) -> Result<&GenerationRecord, EvolutionError> {
        let started = Instant::now();
        let mut state = self.state.clone();
        let generation = state.generation;
        let mut candidates = cma_ask(&mut state)?;

        let evaluations = match self.evaluate(&candidates, generation) {
            Err(e) if e.is_embed_service_failure() => self.evaluate(&candidates, generation)?,
            other => other?,
        };
        for (c, e) in candidates.iter_mut().zip(&evaluations) {
            c.loss = Some(e.loss);
        }
        cma_tell(&mut state, &candidates)?;

        let embeddings: Vec<Embedding> = evaluations.iter().map(|e| e.best_frame_embedding.clone()).collect();
        let diversity = population_diversity(&embeddings)?;
        let cma_config = state.config.clone();
        let noise_injected = apply_diversity_noise(&mut state, diversity, &cma_config);

        let losses: Vec<f64> = evaluations.iter().map(|e| e.loss).collect();
        let best_index = (0..losses.len()).fold(0, |b, i| if losses[i] < losses[b] { i } else { b });
        let best_embedding = &embeddings[best_index];
        let best_eval = &evaluations[best_index];
        let best_frame = match &best_eval.best_frame {
            Some(img) => img.clone(),
            None => render_candidate_frame(
                &candidates[best_index].params,
                &self.config,
                eval_seed(self.config.run_seed, generation, best_index),
                best_eval.best_frame_index,
            )?,
        };
        let cross_generation_diversity = match &self.previous_best {
            Some(prev) => 1.0 - cosine_similarity(prev, best_embedding)?,
            None => 0.0,
        };
        let record = GenerationRecord {
            generation,
            semantic_losses: evaluations.iter().map(|e| e.semantic.loss).collect(),
            candidate_params: candidates.iter().map(|c| c.params).collect(),
            best_index,
            best_params: candidates[best_index].params,
            best_loss: losses[best_index],
            best_so_far_loss: state.best_so_far.as_ref().map_or(losses[best_index], |b| b.loss),
            candidate_losses: losses,
            diversity,
            cross_generation_diversity,
            noise_injected,
            sigma: state.sigma,
            best_frame_digest: frame_digest(&best_frame),
            wall_ms: started.elapsed().as_millis() as u64,
        };

        self.previous_best = Some(best_embedding.clone());
        self.last_best_frame = Some(best_frame);
        self.state = state;
        self.history.records.push(record);
        Ok(self.history.records.last().expect("just pushed"))
    }

    fn evaluate(&self, candidates: &[Candidate], generation: u64) -> Result<Vec<Evaluation>, EvolutionError> {
        let theta = self.history.current_theta_prompt();
        let run = |parallel| {
            evaluate_population(
                candidates,
                &self.prompt_embedding,
                &theta,
                &self.config,
                generation,
                &*self.embedder,
                parallel,
            )
        };
        match (&self.pool, self.config.workers) {
            (_, 1) => run(false),
            (Some(pool), _) => pool.install(|| run(true)),
            (None, _) => run(true),
        }
    }

    /// Swaps in a new prompt between generations. The optimizer state is
    /// kept as is; only the target embedding and the prior change.
    pub fn refine_prompt(&mut self, new_prompt: &str, mapping: &MappingModel) -> Result<(), EvolutionError> {
        let embedding = embed_prompt(&*self.embedder, new_prompt)?;
        let theta = mapping.predict(&embedding)?;
        self.prompt_embedding = embedding;
        self.history.prompt_revisions.push(PromptRevision {
            generation: self.state.generation,
            prompt: new_prompt.to_string(),
            theta_prompt: theta.to_array(),
        });
        Ok(())
    }

    /// Moves the optimizer mean onto `params` without touching anything else.
    pub fn recenter(&mut self, params: &SwarmParams) -> Result<(), EvolutionError> {
        self.state.mean = encode_params_nudged(params)?.to_vec();
        Ok(())
    }
}

fn build_pool(workers: usize) -> Result<Option<rayon::ThreadPool>, EvolutionError> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| EvolutionError::Config(format!("worker pool: {e}")))
}

/// A run that stopped early, with whatever it had recorded.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error}")]
pub struct EvolutionAborted {
    /// `None` when the run failed before its first generation could start.
    pub history: Option<Box<RunHistory>>,
    pub error: EvolutionError,
}

/// Runs `config.generations` generations with the embedder named in the
/// config, calling `on_progress` after each one.
pub fn evolve(
    prompt: &str,
    config: &EvolutionConfig,
    mapping: &MappingModel,
    on_progress: impl FnMut(&GenerationRecord),
) -> Result<RunHistory, EvolutionAborted> {
    evolve_with(prompt, config, mapping, config.embedder.build(), on_progress)
}

/// [`evolve`] with an explicit embedder.
pub fn evolve_with(
    prompt: &str,
    config: &EvolutionConfig,
    mapping: &MappingModel,
    embedder: Arc<dyn Embedder>,
    mut on_progress: impl FnMut(&GenerationRecord),
) -> Result<RunHistory, EvolutionAborted> {
    let mut ctx = RunContext::new(prompt, config.clone(), mapping, embedder)
        .map_err(|error| EvolutionAborted { history: None, error })?;
    for _ in 0..config.generations {
        match ctx.run_generation() {
            Ok(record) => on_progress(record),
            Err(error) => {
                return Err(EvolutionAborted {
                    history: Some(Box::new(ctx.into_history())),
                    error,
                })
            }
        }
    }
    Ok(ctx.into_history())
}
