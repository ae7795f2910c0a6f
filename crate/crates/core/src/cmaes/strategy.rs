//! Dimension-agnostic CMA-ES with an ask/tell interface.
//!
//! Strategy constants follow the standard defaults as functions of the
//! dimension `n` and the variance-effective selection mass `mu_eff`:
//!
//! ```text
//! w_i    ∝ ln(mu + 1/2) - ln(i),  i = 1..mu,  Σ w_i = 1
//! mu_eff = 1 / Σ w_i²
//! c_σ    = (mu_eff + 2) / (n + mu_eff + 5)
//! d_σ    = 1 + 2·max(0, sqrt((mu_eff - 1)/(n + 1)) - 1) + c_σ
//! c_c    = (4 + mu_eff/n) / (n + 4 + 2·mu_eff/n)
//! c_1    = 2 / ((n + 1.3)² + mu_eff)
//! c_μ    = min(1 - c_1, 2·(mu_eff - 2 + 1/mu_eff) / ((n + 2)² + mu_eff))
//! E‖N(0,I)‖ ≈ sqrt(n)·(1 - 1/(4n) + 1/(21n²))
//! ```

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CmaConfig, CmaError};
use crate::linalg::{identity, jacobi_eigen, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};
use crate::rng::{rng_from_seed, SimRng};

/// Condition number above which the covariance is repaired.
pub const MAX_CONDITION: f64 = 1e14;
/// Diagonal loading added on repair, relative to the trace.
pub const REPAIR_LOADING: f64 = 1e-12;

/// Constants derived from `(n, λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl StrategyParams {
    pub fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        StrategyParams {
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

/// Best point seen so far and its loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPoint {
    pub point: Vec<f64>,
    pub loss: f64,
}

/// Full evolution-strategy state.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    pub mean: Vec<f64>,
    pub sigma: f64,
    /// Row-major `n × n`.
    pub cov: Vec<f64>,
    pub p_sigma: Vec<f64>,
    pub p_c: Vec<f64>,
    pub generation: u64,
    pub rng: SimRng,
    pub best_so_far: Option<BestPoint>,
    pub config: CmaConfig,
    pub strategy: StrategyParams,
}

/// `C = B·diag(D²)·Bᵀ`, plus `C^{-1/2}`.
struct Factored {
    b: Vec<f64>,
    d: Vec<f64>,
}

impl CmaState {
    pub fn new(mean: Vec<f64>, config: CmaConfig) -> Result<Self, CmaError> {
        config.validate()?;
        if mean.len() != config.dimension {
            return Err(CmaError::DimensionMismatch {
                expected: config.dimension,
                got: mean.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(CmaError::InvalidConfig("mean has non-finite entries".into()));
        }
        let n = config.dimension;
        Ok(CmaState {
            sigma: config.sigma0,
            cov: identity(n),
            p_sigma: vec![0.0; n],
            p_c: vec![0.0; n],
            generation: 0,
            rng: rng_from_seed(config.seed),
            best_so_far: None,
            strategy: StrategyParams::new(n, config.population_size),
            mean,
            config,
        })
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    /// Eigendecomposition of the covariance, repairing it first if it is badly
    /// conditioned or has lost positive definiteness.
    fn factor(&mut self) -> Result<Factored, CmaError> {
        let n = self.dimension();
        for attempt in 0..2 {
            let eig = jacobi_eigen(&self.cov, n, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS)
                .map_err(|_| CmaError::CovarianceError)?;
            let max = eig.values[0];
            let min = eig.values[n - 1];
            if min > 0.0 && max / min <= MAX_CONDITION {
                return Ok(Factored {
                    d: eig.values.iter().map(|v| v.sqrt()).collect(),
                    b: eig.vectors,
                });
            }
            if attempt == 0 {
                let trace: f64 = (0..n).map(|i| self.cov[i * n + i]).sum();
                let load = REPAIR_LOADING * trace.abs().max(f64::MIN_POSITIVE);
                for i in 0..n {
                    self.cov[i * n + i] += load;
                }
            } else if min > 0.0 {
                // still ill-conditioned but usable
                return Ok(Factored {
                    d: eig.values.iter().map(|v| v.sqrt()).collect(),
                    b: eig.vectors,
                });
            }
        }
        Err(CmaError::CovarianceError)
    }

    /// Samples `λ` points `mean + σ·B·D·N(0, I)`.
    pub fn ask(&mut self) -> Result<Vec<Vec<f64>>, CmaError> {
        let n = self.dimension();
        let f = self.factor()?;
        let lambda = self.strategy.lambda;
        let mut out = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut self.rng)).collect();
            let mut x = self.mean.clone();
            for i in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += f.b[i * n + k] * f.d[k] * z[k];
                }
                x[i] += self.sigma * acc;
            }
            out.push(x);
        }
        Ok(out)
    }

    /// Updates mean, paths, covariance and step size from evaluated points.
    pub fn tell(&mut self, points: &[Vec<f64>], losses: &[f64]) -> Result<(), CmaError> {
        let n = self.dimension();
        let sp = self.strategy.clone();
        if points.len() != sp.lambda || losses.len() != sp.lambda {
            return Err(CmaError::PopulationMismatch {
                expected: sp.lambda,
                got: points.len().min(losses.len()),
            });
        }
        if let Some(index) = losses.iter().position(|l| !l.is_finite()) {
            return Err(CmaError::InvalidFitness { index });
        }
        if points.iter().any(|p| p.len() != n) {
            return Err(CmaError::DimensionMismatch {
                expected: n,
                got: points.iter().map(Vec::len).find(|&l| l != n).unwrap_or(0),
            });
        }
        let f = self.factor()?;

        let mut order: Vec<usize> = (0..sp.lambda).collect();
        order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));

        let old_mean = self.mean.clone();
        let sigma = self.sigma;
        let selected: Vec<Vec<f64>> = order[..sp.mu]
            .iter()
            .map(|&k| points[k].iter().zip(&old_mean).map(|(x, m)| (x - m) / sigma).collect())
            .collect();

        let mut new_mean = vec![0.0; n];
        for (w, &k) in sp.weights.iter().zip(&order[..sp.mu]) {
            for i in 0..n {
                new_mean[i] += w * points[k][i];
            }
        }
        let mut y_w = vec![0.0; n];
        for (w, y) in sp.weights.iter().zip(&selected) {
            for i in 0..n {
                y_w[i] += w * y[i];
            }
        }

        // C^{-1/2} y_w = B · D^{-1} · Bᵀ · y_w
        let mut bt_y = vec![0.0; n];
        for k in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += f.b[i * n + k] * y_w[i];
            }
            bt_y[k] = acc / f.d[k];
        }
        let mut c_inv_sqrt_y = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += f.b[i * n + k] * bt_y[k];
            }
            c_inv_sqrt_y[i] = acc;
        }

        let cs = sp.c_sigma;
        let ps_gain = (cs * (2.0 - cs) * sp.mu_eff).sqrt();
        for i in 0..n {
            self.p_sigma[i] = (1.0 - cs) * self.p_sigma[i] + ps_gain * c_inv_sqrt_y[i];
        }
        let ps_norm = self.p_sigma.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gen = (self.generation + 1) as f64;
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * gen)).sqrt()
            < (1.4 + 2.0 / (n as f64 + 1.0)) * sp.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };

        let cc = sp.c_c;
        let pc_gain = (cc * (2.0 - cc) * sp.mu_eff).sqrt();
        for i in 0..n {
            self.p_c[i] = (1.0 - cc) * self.p_c[i] + h * pc_gain * y_w[i];
        }

        let delta_h = (1.0 - h) * cc * (2.0 - cc);
        let decay = 1.0 + sp.c_1 * delta_h - sp.c_1 - sp.c_mu;
        for i in 0..n {
            for j in 0..=i {
                let mut rank_mu = 0.0;
                for (w, y) in sp.weights.iter().zip(&selected) {
                    rank_mu += w * y[i] * y[j];
                }
                let v = decay * self.cov[i * n + j] + sp.c_1 * self.p_c[i] * self.p_c[j] + sp.c_mu * rank_mu;
                self.cov[i * n + j] = v;
                self.cov[j * n + i] = v;
            }
        }

        let new_sigma = sigma * ((cs / sp.d_sigma) * (ps_norm / sp.chi_n - 1.0)).exp();
        self.sigma = clip_sigma(new_sigma, self.config.sigma_max);
        self.mean = new_mean;

        let best = order[0];
        if self.best_so_far.as_ref().is_none_or(|b| losses[best] < b.loss) {
            self.best_so_far = Some(BestPoint {
                point: points[best].clone(),
                loss: losses[best],
            });
        }
        self.generation += 1;
        Ok(())
    }

    /// Largest absolute asymmetry `|C_ij - C_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dimension();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.cov[i * n + j] - self.cov[j * n + i]).abs());
            }
        }
        worst
    }
}

pub(crate) fn clip_sigma(sigma: f64, sigma_max: f64) -> f64 {
    if sigma.is_nan() {
        return sigma_max;
    }
    sigma.clamp(f64::MIN_POSITIVE, sigma_max)
}
