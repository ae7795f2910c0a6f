//! Language-steered evolution of boids-style swarms.
//!
//! A prompt is mapped to initial swarm coefficients ([`prompt2param`]), a
//! CMA-ES search ([`cmaes`]) refines them against a semantic fitness computed
//! from rendered simulation frames ([`swarm`], [`render`], [`semantic`]), and
//! [`evolution`] ties the loop together. Finished lifeforms can be released
//! into a shared [`ecosystem`].

// Index loops mirror the matrix notation in the numeric code, and `!(x < y)`
// is used on purpose so NaN lands on the rejecting branch.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]
pub mod cmaes;
pub mod ecosystem;
pub mod evolution;
pub mod linalg;
pub mod prompt2param;
pub mod render;
pub mod rng;
pub mod semantic;
pub mod swarm;
