use serde::{Deserialize, Serialize};

use super::EcosystemError;
use crate::linalg::{jacobi_eigen, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// Unit vectors, by descending eigenvalue.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratios: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Principal components of `data` (rows are observations).
///
/// Uses the sample covariance (divisor `n - 1`) and Jacobi rotations. Each
/// component is signed so its largest-magnitude entry is positive. When the
/// data has no variance beyond rounding noise every ratio is zero.
pub fn pca(data: &[Vec<f64>], k: usize) -> Result<Pca, EcosystemError> {
    if data.len() < 2 {
        return Err(EcosystemError::InsufficientData(data.len()));
    }
    let d = data[0].len();
    if data.iter().any(|r| r.len() != d) {
        return Err(EcosystemError::DimensionError { expected: d, got: data.iter().map(Vec::len).find(|&l| l != d).unwrap_or(0) });
    }
    if k > d {
        return Err(EcosystemError::DimensionError { expected: d, got: k });
    }
    let n = data.len() as f64;
    let mut mean = vec![0.0; d];
    for row in data {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = vec![0.0; d * d];
    for row in data {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[i * d + j] / (n - 1.0);
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }

    let eig = jacobi_eigen(&cov, d, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS)?;
    let values: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
    let mut total: f64 = values.iter().sum();
    // identical rows can leave rounding-level variance behind
    let scale: f64 = 1.0 + mean.iter().map(|m| m * m).sum::<f64>();
    if total <= 1e-24 * scale {
        total = 0.0;
    }
    let mut components = Vec::with_capacity(k);
    let mut ratios = Vec::with_capacity(k);
    for c in 0..k {
        let mut v = eig.vector(c);
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        ratios.push(if total > 0.0 { values[c] / total } else { 0.0 });
    }
    Ok(Pca {
        components,
        explained_variance_ratios: ratios,
        eigenvalues: values[..k].to_vec(),
        mean,
    })
}
