//! Boids-style swarm on the unit torus.
//!
//! Each step, every agent looks at neighbors inside `neighbor_radius` and
//! updates its velocity with alignment, cohesion and separation terms plus
//! gaussian noise; speed is then clamped and the position advanced with
//! wraparound. Separation only acts within 0.4 of the neighbor radius.

mod grid;
mod params;
mod world;

use thiserror::Error;

pub use grid::{torus_delta, torus_dist2, wrap_point, wrap_unit, SpatialGrid};
pub use params::{
    denormalize, normalize, validate_params, Bound, SwarmParams, Validated, PARAM_BOUNDS, PARAM_DIM,
    PARAM_NAMES,
};
pub use world::{
    init_world, neighbors_within, run_simulation, step_world, AgentState, Frame, SwarmWorld, Trajectory,
    SEPARATION_EPSILON, SEPARATION_RADIUS_FRACTION,
};

pub(crate) use world::{draw_noise, Steering};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwarmError {
    #[error("parameter {name} is not finite: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("expected 6 parameters, got {0}")]
    WrongDimension(usize),
    #[error("a world needs at least one agent")]
    EmptyWorld,
    #[error("agent index {index} out of range for {len} agents")]
    IndexError { index: usize, len: usize },
}
