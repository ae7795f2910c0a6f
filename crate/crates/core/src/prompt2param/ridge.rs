//! Closed-form ridge regression with an unpenalized intercept.
//!
//! Features and targets are centered first, which removes the intercept from
//! the penalized problem. When there are fewer rows than features the
//! equivalent dual system `(Xc Xcᵀ + λI) α = Yc`, `W = Xcᵀ α` is solved
//! instead of the `d × d` primal one; at `λ = 0` the dual uses the
//! pseudo-inverse, giving the minimum-norm interpolant.

use super::MappingError;
use crate::linalg::{jacobi_eigen, solve, LinalgError, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};

/// Relative eigenvalue cutoff when pseudo-inverting the Gram matrix.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    /// `d × m` row-major.
    pub weights: Vec<f64>,
    pub intercept: Vec<f64>,
    pub n_features: usize,
    pub n_targets: usize,
}

impl RidgeFit {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let m = self.n_targets;
        let mut out = self.intercept.clone();
        for (i, &xi) in x.iter().enumerate().take(self.n_features) {
            if xi == 0.0 {
                continue;
            }
            for k in 0..m {
                out[k] += xi * self.weights[i * m + k];
            }
        }
        out
    }

    /// Ridge objective `Σ‖y − ŷ‖² + λ‖W‖²_F` on the given data.
    pub fn objective(&self, features: &[Vec<f64>], targets: &[Vec<f64>], lambda: f64) -> f64 {
        let sse: f64 = features
            .iter()
            .zip(targets)
            .map(|(x, y)| {
                let p = self.predict(x);
                p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum();
        sse + lambda * self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Fits `y ≈ Wᵀx + b` minimizing `Σ‖y − Wᵀx − b‖² + λ‖W‖²`.
pub fn fit_ridge(features: &[Vec<f64>], targets: &[Vec<f64>], lambda: f64) -> Result<RidgeFit, MappingError> {
    let n = features.len();
    if n == 0 || n != targets.len() {
        return Err(MappingError::DatasetTooSmall(n));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(MappingError::InvalidLambda(lambda));
    }
    let d = features[0].len();
    let m = targets[0].len();
    if features.iter().any(|x| x.len() != d) || targets.iter().any(|y| y.len() != m) {
        return Err(MappingError::RaggedData);
    }

    let x_mean = column_mean(features, d);
    let y_mean = column_mean(targets, m);
    let xc: Vec<Vec<f64>> = features.iter().map(|x| sub(x, &x_mean)).collect();
    let yc: Vec<Vec<f64>> = targets.iter().map(|y| sub(y, &y_mean)).collect();

    let weights = if n <= d {
        dual_weights(&xc, &yc, d, m, lambda)?
    } else {
        primal_weights(&xc, &yc, d, m, lambda)?
    };

    let mut intercept = y_mean;
    for i in 0..d {
        for k in 0..m {
            intercept[k] -= x_mean[i] * weights[i * m + k];
        }
    }
    Ok(RidgeFit {
        weights,
        intercept,
        n_features: d,
        n_targets: m,
    })
}

fn primal_weights(xc: &[Vec<f64>], yc: &[Vec<f64>], d: usize, m: usize, lambda: f64) -> Result<Vec<f64>, MappingError> {
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d * m];
    for (x, y) in xc.iter().zip(yc) {
        for i in 0..d {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                a[i * d + j] += x[i] * x[j];
            }
            for k in 0..m {
                b[i * m + k] += x[i] * y[k];
            }
        }
    }
    for i in 0..d {
        a[i * d + i] += lambda;
    }
    solve(&a, d, &b, m).map_err(singular)
}

fn dual_weights(xc: &[Vec<f64>], yc: &[Vec<f64>], d: usize, m: usize, lambda: f64) -> Result<Vec<f64>, MappingError> {
    let n = xc.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let g: f64 = xc[i].iter().zip(&xc[j]).map(|(a, b)| a * b).sum();
            gram[i * n + j] = g;
            gram[j * n + i] = g;
        }
    }
    let rhs: Vec<f64> = yc.iter().flat_map(|y| y.iter().copied()).collect();

    let alpha = if lambda > 0.0 {
        for i in 0..n {
            gram[i * n + i] += lambda;
        }
        solve(&gram, n, &rhs, m).map_err(singular)?
    } else {
        pseudo_solve(&gram, n, &rhs, m)?
    };

    let mut w = vec![0.0; d * m];
    for (r, x) in xc.iter().enumerate() {
        for i in 0..d {
            if x[i] == 0.0 {
                continue;
            }
            for k in 0..m {
                w[i * m + k] += x[i] * alpha[r * m + k];
            }
        }
    }
    Ok(w)
}

/// Minimum-norm solve through the eigendecomposition of a centered Gram
/// matrix. Centering always costs one rank; any further deficiency means the
/// unregularized problem has no unique solution.
fn pseudo_solve(gram: &[f64], n: usize, rhs: &[f64], m: usize) -> Result<Vec<f64>, MappingError> {
    let eig = jacobi_eigen(gram, n, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS).map_err(singular)?;
    let top = eig.values.first().copied().unwrap_or(0.0).abs();
    let cutoff = RANK_TOLERANCE * top.max(f64::MIN_POSITIVE);
    let null = eig.values.iter().filter(|v| v.abs() <= cutoff).count();
    if (n > 1 && null > 1) || top == 0.0 {
        return Err(MappingError::SingularSystem);
    }
    let mut alpha = vec![0.0; n * m];
    for (k, &val) in eig.values.iter().enumerate() {
        if val.abs() <= cutoff {
            continue;
        }
        let v = eig.vector(k);
        for c in 0..m {
            let proj: f64 = (0..n).map(|r| v[r] * rhs[r * m + c]).sum::<f64>() / val;
            for r in 0..n {
                alpha[r * m + c] += v[r] * proj;
            }
        }
    }
    Ok(alpha)
}

fn singular(e: LinalgError) -> MappingError {
    match e {
        LinalgError::Singular | LinalgError::NoConvergence(_) => MappingError::SingularSystem,
        other => MappingError::Linalg(other),
    }
}

fn column_mean(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    let mut acc = vec![0.0; width];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
