use serde::{Deserialize, Serialize};

use super::EvolutionConfig;
use crate::swarm::{SwarmParams, PARAM_DIM};

/// Summary of one generation, written to the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u64,
    /// Prior-penalized losses in sampling order. These are what the optimizer
    /// was told.
    pub candidate_losses: Vec<f64>,
    /// Raw `1 - similarity` losses before the prior penalty.
    pub semantic_losses: Vec<f64>,
    pub candidate_params: Vec<SwarmParams>,
    pub best_index: usize,
    pub best_params: SwarmParams,
    /// Minimum of `candidate_losses`.
    pub best_loss: f64,
    /// Optimizer's best-so-far loss after this generation.
    pub best_so_far_loss: f64,
    /// Mean pairwise cosine distance between the candidates' best-frame
    /// embeddings.
    pub diversity: f64,
    /// Cosine distance between this generation's best embedding and the
    /// previous generation's. Zero for the first generation.
    pub cross_generation_diversity: f64,
    pub noise_injected: bool,
    /// Step size after the update.
    pub sigma: f64,
    #[serde(with = "hex_u64")]
    pub best_frame_digest: u64,
    /// Wall-clock time of the generation. Not covered by determinism checks.
    pub wall_ms: u64,
}

/// A prompt change made between generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRevision {
    /// Index of the first generation scored against the new prompt.
    pub generation: u64,
    pub prompt: String,
    pub theta_prompt: [f64; PARAM_DIM],
}

/// Where a branched run came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchOrigin {
    pub parent_run_id: String,
    pub generation: u64,
    pub candidate_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub run_id: String,
    /// Prompt the run started with.
    pub prompt: String,
    pub prompt_revisions: Vec<PromptRevision>,
    /// Prior derived from `prompt`. Revisions carry their own.
    pub theta_prompt: [f64; PARAM_DIM],
    pub records: Vec<GenerationRecord>,
    pub config: EvolutionConfig,
    pub rng_algorithm_id: String,
    pub embedder: String,
    pub parent: Option<BranchOrigin>,
}

impl RunHistory {
    /// The prompt in force for the next generation.
    pub fn current_prompt(&self) -> &str {
        self.prompt_revisions.last().map_or(&self.prompt, |r| &r.prompt)
    }

    /// The prior in force for the next generation.
    pub fn current_theta_prompt(&self) -> [f64; PARAM_DIM] {
        self.prompt_revisions.last().map_or(self.theta_prompt, |r| r.theta_prompt)
    }

    pub fn record(&self, generation: u64) -> Option<&GenerationRecord> {
        self.records.iter().find(|r| r.generation == generation)
    }

    /// Best-so-far loss after each generation.
    pub fn best_so_far_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.best_so_far_loss).collect()
    }

    /// Copy with every `wall_ms` zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> RunHistory {
        let mut h = self.clone();
        for r in &mut h.records {
            r.wall_ms = 0;
        }
        h
    }
}

/// Serializes a `u64` as 16 lowercase hex digits, which survives JSON readers
/// that parse numbers as doubles.
pub(crate) mod hex_u64 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let text = String::deserialize(d)?;
        u64::from_str_radix(&text, 16).map_err(D::Error::custom)
    }
}
