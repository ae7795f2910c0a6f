//! Seeded, portable randomness shared by every stochastic component.
//!
//! All simulations, samplers and tie-breaking draws go through [`SimRng`], a
//! ChaCha8 stream generator whose output is identical on every platform. The
//! algorithm identifier is written into run logs so a recorded run can be
//! replayed with the same generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Identifier recorded in run logs alongside every seed.
pub const RNG_ALGORITHM_ID: &str = "chacha8/rand_chacha-0.9";

/// Builds a generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer. Used to derive independent child seeds.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from a parent seed and an ordered list of indices.
///
/// `derive_seed(run_seed, &[generation, candidate])` gives every candidate of
/// every generation its own reproducible stream.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(parent), |acc, &part| mix64(acc ^ mix64(part)))
}
