//! Covariance Matrix Adaptation Evolution Strategy over swarm parameters.
//!
//! [`CmaState`] is a plain CMA-ES over `ℝⁿ`. The swarm-facing functions
//! ([`cma_init`], [`cma_ask`], [`cma_tell`]) run it in the logistic search
//! space of [`bounds`], so every sampled point decodes to valid parameters.
//! On top of that sit the prompt prior penalty and the diversity-triggered
//! step-size boost.

pub mod bounds;
mod strategy;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::semantic::{cosine_similarity, Embedding, SemanticError};
use crate::swarm::{normalize, SwarmParams, PARAM_DIM};

pub use bounds::{decode_params, encode_params, encode_params_nudged};
pub use strategy::{BestPoint, CmaState, StrategyParams, MAX_CONDITION, REPAIR_LOADING};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmaError {
    #[error("parameter {index} = {value} lies on its bound and has no search-space preimage")]
    BoundaryValue { index: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("covariance matrix is not positive definite")]
    CovarianceError,
    #[error("candidate {index} has a missing or non-finite loss")]
    InvalidFitness { index: usize },
    #[error("expected {expected} candidates, got {got}")]
    PopulationMismatch { expected: usize, got: usize },
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Semantic(#[from] SemanticError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmaConfig {
    /// λ, candidates per generation.
    pub population_size: usize,
    pub sigma0: f64,
    pub dimension: usize,
    pub max_generations: usize,
    pub seed: u64,
    pub prior_lambda: f64,
    pub diversity_threshold: f64,
    pub noise_boost: f64,
    pub sigma_max: f64,
}

impl Default for CmaConfig {
    fn default() -> Self {
        CmaConfig {
            population_size: 16,
            sigma0: 0.3,
            dimension: PARAM_DIM,
            max_generations: 30,
            seed: 0,
            prior_lambda: 0.05,
            diversity_threshold: 0.05,
            noise_boost: 1.3,
            sigma_max: 1.0,
        }
    }
}

impl CmaConfig {
    /// μ = ⌊λ/2⌋.
    pub fn mu(&self) -> usize {
        self.population_size / 2
    }

    pub fn validate(&self) -> Result<(), CmaError> {
        let mu = self.mu();
        if mu < 2 || mu >= self.population_size {
            return Err(CmaError::InvalidConfig(format!(
                "population_size {} gives mu = {mu}; need 2 <= mu < lambda",
                self.population_size
            )));
        }
        if self.dimension == 0 {
            return Err(CmaError::InvalidConfig("dimension must be positive".into()));
        }
        if !(self.sigma_max > 0.0) || !(self.sigma0 > 0.0 && self.sigma0 <= self.sigma_max) {
            return Err(CmaError::InvalidConfig(format!(
                "sigma0 {} must lie in (0, sigma_max = {}]",
                self.sigma0, self.sigma_max
            )));
        }
        if !(self.prior_lambda >= 0.0) || !(self.noise_boost >= 1.0) || !self.diversity_threshold.is_finite() {
            return Err(CmaError::InvalidConfig(
                "prior_lambda >= 0, noise_boost >= 1 and a finite diversity_threshold are required".into(),
            ));
        }
        Ok(())
    }
}

/// One sampled parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Search-space point.
    pub z: Vec<f64>,
    /// `decode_params(z)`.
    pub params: SwarmParams,
    pub loss: Option<f64>,
}

impl Candidate {
    pub fn from_point(z: Vec<f64>) -> Self {
        let params = decode_params(&z);
        Candidate { z, params, loss: None }
    }
}

/// Starts the search at `theta_init` with identity covariance and zero paths.
pub fn cma_init(theta_init: &SwarmParams, config: &CmaConfig) -> Result<CmaState, CmaError> {
    if config.dimension != PARAM_DIM {
        return Err(CmaError::DimensionMismatch {
            expected: PARAM_DIM,
            got: config.dimension,
        });
    }
    let mean = match encode_params(theta_init) {
        Ok(z) => z,
        Err(CmaError::BoundaryValue { .. }) => encode_params_nudged(theta_init)?,
        Err(e) => return Err(e),
    };
    CmaState::new(mean.to_vec(), config.clone())
}

pub fn cma_ask(state: &mut CmaState) -> Result<Vec<Candidate>, CmaError> {
    Ok(state.ask()?.into_iter().map(Candidate::from_point).collect())
}

/// Ranks candidates by loss (ties keep sampling order) and updates the state.
pub fn cma_tell(state: &mut CmaState, candidates: &[Candidate]) -> Result<(), CmaError> {
    let expected = state.strategy.lambda;
    if candidates.len() != expected {
        return Err(CmaError::PopulationMismatch {
            expected,
            got: candidates.len(),
        });
    }
    let mut losses = Vec::with_capacity(candidates.len());
    for (index, c) in candidates.iter().enumerate() {
        match c.loss {
            Some(l) if l.is_finite() => losses.push(l),
            _ => return Err(CmaError::InvalidFitness { index }),
        }
    }
    let points: Vec<Vec<f64>> = candidates.iter().map(|c| c.z.clone()).collect();
    state.tell(&points, &losses)
}

/// Decoded best-so-far parameters and loss.
pub fn best_params(state: &CmaState) -> Option<(SwarmParams, f64)> {
    state.best_so_far.as_ref().map(|b| (decode_params(&b.point), b.loss))
}

/// `loss + prior_lambda · ‖normalize(params) − normalize(theta_prompt)‖²`.
pub fn prior_penalized_fitness(loss: f64, params: &SwarmParams, theta_prompt: &[f64; PARAM_DIM], prior_lambda: f64) -> f64 {
    if prior_lambda == 0.0 {
        return loss;
    }
    loss + prior_lambda * normalized_distance2(params, theta_prompt)
}

/// Squared distance in the unit-normalized parameter box.
pub fn normalized_distance2(params: &SwarmParams, theta_prompt: &[f64; PARAM_DIM]) -> f64 {
    let a = params.normalized();
    let b = normalize(theta_prompt);
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean pairwise cosine distance `1 − cos` over unordered pairs.
pub fn population_diversity(embeddings: &[Embedding]) -> Result<f64, CmaError> {
    if embeddings.is_empty() {
        return Err(SemanticError::EmptyInput.into());
    }
    let n = embeddings.len();
    if n == 1 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += 1.0 - cosine_similarity(&embeddings[i], &embeddings[j])?;
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Boosts `sigma` and jitters the mean when the population has collapsed
/// (`diversity < diversity_threshold`). Returns whether noise was injected.
pub fn apply_diversity_noise(state: &mut CmaState, diversity: f64, config: &CmaConfig) -> bool {
    if !(diversity < config.diversity_threshold) {
        return false;
    }
    state.sigma = (state.sigma * config.noise_boost).min(config.sigma_max);
    let scale = 0.1 * state.sigma;
    for m in state.mean.iter_mut() {
        let n: f64 = StandardNormal.sample(&mut state.rng);
        *m += scale * n;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::EMBEDDING_DIM;

    fn state() -> CmaState {
        cma_init(&SwarmParams::default(), &CmaConfig::default()).unwrap()
    }

    #[test]
    fn init_examples() {
        let s = state();
        assert_eq!(s.cov, crate::linalg::identity(6));
        assert!(s.p_sigma.iter().chain(&s.p_c).all(|&v| v == 0.0));
        assert_eq!(s.generation, 0);
        let back = decode_params(&s.mean).to_array();
        for (a, b) in back.iter().zip(SwarmParams::default().to_array()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ask_returns_lambda_candidates() {
        let mut s = state();
        let c = cma_ask(&mut s).unwrap();
        assert_eq!(c.len(), 16);
        for cand in &c {
            assert_eq!(cand.params, decode_params(&cand.z));
        }
    }

    #[test]
    fn degenerate_sigma_collapses_samples() {
        let mut s = state();
        s.sigma = 1e-12;
        let center = decode_params(&s.mean).to_array();
        for c in cma_ask(&mut s).unwrap() {
            for (a, b) in c.params.to_array().iter().zip(&center) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cloned_state_asks_identically() {
        let mut a = state();
        let mut b = a.clone();
        assert_eq!(cma_ask(&mut a).unwrap(), cma_ask(&mut b).unwrap());
    }

    #[test]
    fn tell_rejects_bad_input() {
        let mut s = state();
        let mut c = cma_ask(&mut s).unwrap();
        for (i, cand) in c.iter_mut().enumerate() {
            cand.loss = Some(i as f64);
        }
        c[3].loss = Some(f64::NAN);
        assert_eq!(cma_tell(&mut s, &c), Err(CmaError::InvalidFitness { index: 3 }));
        c.pop();
        assert!(matches!(cma_tell(&mut s, &c), Err(CmaError::PopulationMismatch { expected: 16, got: 15 })));
    }

    #[test]
    fn equal_losses_use_sampling_order() {
        let mut s = state();
        let mut c = cma_ask(&mut s).unwrap();
        c.iter_mut().for_each(|x| x.loss = Some(0.5));
        let w = s.strategy.weights.clone();
        let mut expect = vec![0.0; 6];
        for (wi, cand) in w.iter().zip(&c) {
            for k in 0..6 {
                expect[k] += wi * cand.z[k];
            }
        }
        cma_tell(&mut s, &c).unwrap();
        assert_eq!(s.mean, expect);
        assert_eq!(s.generation, 1);
    }

    #[test]
    fn prior_penalty_examples() {
        let p = SwarmParams::default();
        assert_eq!(prior_penalized_fitness(0.4, &p, &[0.2, 0.02, 1.0, 1.0, 1.0, 0.01], 0.0), 0.4);
        assert_eq!(prior_penalized_fitness(0.4, &p, &p.to_array(), 0.05), 0.4);
        // 0.4 + 0.05 * 1.5 with a constructed normalized distance² of 1.5
        let q = SwarmParams::from_normalized(&[0.5, 0.5, 0.0, 0.5, 0.5, 0.5]).unwrap();
        let target = crate::swarm::denormalize(&[0.5, 0.5, 1.0, 1.0, 0.0, 0.5]);
        // d² = 1.0 + 0.25 + 0.25 = 1.5
        let got = prior_penalized_fitness(0.4, &q, &target, 0.05);
        assert!((got - 0.475).abs() < 1e-9, "{got}");
    }

    #[test]
    fn diversity_examples() {
        let e0 = Embedding::basis(EMBEDDING_DIM, 0);
        let e1 = Embedding::basis(EMBEDDING_DIM, 1);
        assert_eq!(population_diversity(&[e0.clone(), e0.clone(), e0.clone()]).unwrap(), 0.0);
        assert_eq!(population_diversity(&[e0.clone(), e1]).unwrap(), 1.0);
        assert_eq!(population_diversity(&[e0.clone(), e0.negated()]).unwrap(), 2.0);
        assert_eq!(population_diversity(&[e0]).unwrap(), 0.0);
        assert!(population_diversity(&[]).is_err());
    }

    #[test]
    fn diversity_noise_examples() {
        let cfg = CmaConfig::default();
        let mut s = state();
        let before = s.clone();
        assert!(!apply_diversity_noise(&mut s, cfg.diversity_threshold, &cfg));
        assert_eq!(s, before);

        assert!(apply_diversity_noise(&mut s, 0.0, &cfg));
        assert!((s.sigma - 0.39).abs() < 1e-15);
        assert_ne!(s.mean, before.mean);

        for _ in 0..50 {
            apply_diversity_noise(&mut s, 0.0, &cfg);
            assert!(s.sigma <= cfg.sigma_max);
        }
        assert_eq!(s.sigma, cfg.sigma_max);
    }

    #[test]
    fn config_validation() {
        let bad = CmaConfig {
            population_size: 3,
            ..CmaConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CmaConfig {
            sigma0: 2.0,
            ..CmaConfig::default()
        };
        assert!(bad.validate().is_err());
        CmaConfig::default().validate().unwrap();
    }
}
