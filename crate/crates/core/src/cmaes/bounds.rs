//! Logistic squashing between the bounded parameter box and the
//! unconstrained search space.

use super::CmaError;
use crate::swarm::{SwarmParams, PARAM_BOUNDS, PARAM_DIM};

/// Search-space coordinates are saturated at this magnitude when decoding so
/// the decoded value stays strictly inside open bounds.
pub const SEARCH_LIMIT: f64 = 30.0;

/// Fraction of the range a boundary value is moved inward before encoding.
pub const BOUNDARY_NUDGE: f64 = 1e-6;

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Maps interior parameters to search space, `z = logit((x - lo) / range)`.
///
/// Values on (or outside) a bound have no finite preimage and are reported as
/// [`CmaError::BoundaryValue`].
pub fn encode_params(params: &SwarmParams) -> Result<[f64; PARAM_DIM], CmaError> {
    let x = params.to_array();
    let mut z = [0.0; PARAM_DIM];
    for (k, b) in PARAM_BOUNDS.iter().enumerate() {
        let u = (x[k] - b.lo) / b.range();
        if !(u > 0.0 && u < 1.0) {
            return Err(CmaError::BoundaryValue { index: k, value: x[k] });
        }
        z[k] = (u / (1.0 - u)).ln();
    }
    Ok(z)
}

/// Like [`encode_params`], but first moves boundary values inward by
/// [`BOUNDARY_NUDGE`] of their range.
pub fn encode_params_nudged(params: &SwarmParams) -> Result<[f64; PARAM_DIM], CmaError> {
    let mut x = params.to_array();
    for (k, b) in PARAM_BOUNDS.iter().enumerate() {
        let step = BOUNDARY_NUDGE * b.range();
        if x[k] <= b.lo {
            x[k] = b.lo + step;
        } else if x[k] >= b.hi {
            x[k] = b.hi - step;
        }
    }
    encode_params(&SwarmParams::from_array_unchecked(x))
}

/// Total map from search space back into the parameter box.
pub fn decode_params(z: &[f64]) -> SwarmParams {
    let mut x = [0.0; PARAM_DIM];
    for (k, b) in PARAM_BOUNDS.iter().enumerate() {
        let zk = z.get(k).copied().unwrap_or(0.0);
        let zk = if zk.is_nan() { 0.0 } else { zk.clamp(-SEARCH_LIMIT, SEARCH_LIMIT) };
        x[k] = b.lo + b.range() * logistic(zk);
    }
    SwarmParams::from_array_unchecked(x)
}
