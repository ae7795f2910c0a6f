use serde::{Deserialize, Serialize};

use super::SwarmError;

/// Number of searched behavior coefficients.
pub const PARAM_DIM: usize = 6;

/// Field names in vector order.
pub const PARAM_NAMES: [&str; PARAM_DIM] = [
    "neighbor_radius",
    "max_speed",
    "alignment_w",
    "cohesion_w",
    "separation_w",
    "noise_sigma",
];

/// Interval a single coefficient must lie in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
    /// The lower endpoint itself is not admissible.
    pub lo_open: bool,
}

impl Bound {
    pub const fn range(&self) -> f64 {
        self.hi - self.lo
    }

    /// Smallest admissible value. Open lower endpoints are nudged inward by a
    /// millionth of the range.
    pub fn min_admissible(&self) -> f64 {
        if self.lo_open {
            self.lo + 1e-6 * self.range()
        } else {
            self.lo
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_open { x > self.lo } else { x >= self.lo };
        above && x <= self.hi
    }
}

/// Bounds in vector order, matching [`PARAM_NAMES`].
pub const PARAM_BOUNDS: [Bound; PARAM_DIM] = [
    Bound { lo: 0.0, hi: 0.5, lo_open: true },
    Bound { lo: 0.001, hi: 0.1, lo_open: true },
    Bound { lo: 0.0, hi: 2.0, lo_open: false },
    Bound { lo: 0.0, hi: 2.0, lo_open: false },
    Bound { lo: 0.0, hi: 2.0, lo_open: false },
    Bound { lo: 0.0, hi: 0.05, lo_open: false },
];

/// The six behavior coefficients of the swarm model.
///
/// Values of this type are always within [`PARAM_BOUNDS`]; construct them with
/// [`validate_params`] or [`SwarmParams::from_normalized`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwarmParams {
    pub neighbor_radius: f64,
    pub max_speed: f64,
    pub alignment_w: f64,
    pub cohesion_w: f64,
    pub separation_w: f64,
    pub noise_sigma: f64,
}

impl SwarmParams {
    pub fn to_array(&self) -> [f64; PARAM_DIM] {
        [
            self.neighbor_radius,
            self.max_speed,
            self.alignment_w,
            self.cohesion_w,
            self.separation_w,
            self.noise_sigma,
        ]
    }

    pub(crate) fn from_array_unchecked(v: [f64; PARAM_DIM]) -> Self {
        SwarmParams {
            neighbor_radius: v[0],
            max_speed: v[1],
            alignment_w: v[2],
            cohesion_w: v[3],
            separation_w: v[4],
            noise_sigma: v[5],
        }
    }

    /// Each coefficient mapped to `[0, 1]` by its bound interval.
    pub fn normalized(&self) -> [f64; PARAM_DIM] {
        normalize(&self.to_array())
    }

    /// Inverse of [`normalized`](Self::normalized), clamped into bounds.
    pub fn from_normalized(unit: &[f64; PARAM_DIM]) -> Result<Self, SwarmError> {
        Ok(validate_params(&denormalize(unit))?.params)
    }
}

impl Default for SwarmParams {
    fn default() -> Self {
        SwarmParams {
            neighbor_radius: 0.1,
            max_speed: 0.01,
            alignment_w: 0.5,
            cohesion_w: 0.5,
            separation_w: 0.5,
            noise_sigma: 0.002,
        }
    }
}

/// Maps raw coefficients to `[0, 1]` per dimension (no clamping).
pub fn normalize(raw: &[f64; PARAM_DIM]) -> [f64; PARAM_DIM] {
    let mut out = [0.0; PARAM_DIM];
    for (k, b) in PARAM_BOUNDS.iter().enumerate() {
        out[k] = (raw[k] - b.lo) / b.range();
    }
    out
}

pub fn denormalize(unit: &[f64; PARAM_DIM]) -> [f64; PARAM_DIM] {
    let mut out = [0.0; PARAM_DIM];
    for (k, b) in PARAM_BOUNDS.iter().enumerate() {
        out[k] = b.lo + unit[k] * b.range();
    }
    out
}

/// Result of [`validate_params`]: the clamped coefficients and which of them
/// had to be moved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validated {
    pub params: SwarmParams,
    pub clamped: [bool; PARAM_DIM],
}

impl Validated {
    pub fn any_clamped(&self) -> bool {
        self.clamped.iter().any(|&c| c)
    }
}

/// Clamps a raw 6-vector into the admissible box.
///
/// Non-finite entries are rejected rather than clamped.
pub fn validate_params(raw: &[f64]) -> Result<Validated, SwarmError> {
    if raw.len() != PARAM_DIM {
        return Err(SwarmError::WrongDimension(raw.len()));
    }
    let mut values = [0.0; PARAM_DIM];
    let mut clamped = [false; PARAM_DIM];
    for (k, (&x, b)) in raw.iter().zip(PARAM_BOUNDS.iter()).enumerate() {
        if !x.is_finite() {
            return Err(SwarmError::InvalidParameter {
                name: PARAM_NAMES[k],
                value: x,
            });
        }
        values[k] = if b.contains(x) {
            x
        } else {
            clamped[k] = true;
            if x > b.hi {
                b.hi
            } else {
                b.min_admissible()
            }
        };
    }
    Ok(Validated {
        params: SwarmParams::from_array_unchecked(values),
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_range_vector_is_unchanged() {
        let raw = [0.1, 0.05, 1.0, 1.0, 1.0, 0.01];
        let v = validate_params(&raw).unwrap();
        assert_eq!(v.params.to_array(), raw);
        assert!(!v.any_clamped());
    }

    #[test]
    fn saturates_out_of_range_alignment() {
        let v = validate_params(&[0.1, 0.05, 5.0, 1.0, 1.0, 0.01]).unwrap();
        assert_eq!(v.params.alignment_w, 2.0);
        assert_eq!(v.clamped, [false, false, true, false, false, false]);
    }

    #[test]
    fn rejects_nan_and_infinity() {
        let err = validate_params(&[0.1, f64::NAN, 1.0, 1.0, 1.0, 0.01]).unwrap_err();
        assert!(matches!(err, SwarmError::InvalidParameter { name: "max_speed", .. }));
        assert!(validate_params(&[0.1, 0.05, f64::INFINITY, 1.0, 1.0, 0.01]).is_err());
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(matches!(
            validate_params(&[0.1; 5]),
            Err(SwarmError::WrongDimension(5))
        ));
    }

    #[test]
    fn open_lower_bounds_are_nudged_inward() {
        let v = validate_params(&[0.0, 0.001, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(v.params.neighbor_radius > 0.0);
        assert!(v.params.max_speed > 0.001);
        assert_eq!(v.clamped, [true, true, false, false, false, false]);
    }

    #[test]
    fn normalization_round_trips() {
        let p = SwarmParams::default();
        let back = SwarmParams::from_normalized(&p.normalized()).unwrap();
        for (a, b) in p.to_array().iter().zip(back.to_array()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
