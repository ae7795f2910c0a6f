//! Deterministic, model-free embedding provider.
//!
//! Frames are described by six behavior statistics, each squashed into
//! `[-1, 1]`, written into dimensions 0–5 with a constant bias of 1 in
//! dimension 6. Prompts are matched against a keyword table expressed in the
//! same basis, so prompt/frame cosine similarity is meaningful. Prompts with no
//! known keyword hash into dimensions 7–70, which no frame ever occupies.
//!
//! All sums run in agent-index order so results are bit-reproducible.

use rand::Rng;
use sha2::{Digest, Sha256};

use super::embedding::{Embedding, EMBEDDING_DIM};
use super::{Embedder, FrameInput, SemanticError};
use crate::rng::rng_from_seed;
use crate::swarm::{torus_delta, AgentState};

/// Version tag of the statistic maps and keyword table below.
pub const ORACLE_VERSION: &str = "oracle-v1";

pub const STAT_NEAREST_NEIGHBOR: usize = 0;
pub const STAT_POLARIZATION: usize = 1;
pub const STAT_ANGULAR_MOMENTUM: usize = 2;
pub const STAT_OCCUPANCY_ENTROPY: usize = 3;
pub const STAT_SPEED: usize = 4;
pub const STAT_RADIAL_SPREAD: usize = 5;
pub const BIAS_DIM: usize = 6;
pub const HASH_DIMS: std::ops::RangeInclusive<usize> = 7..=70;

/// Side of the occupancy histogram used for the entropy statistic.
pub const OCCUPANCY_GRID: usize = 8;

/// Expected nearest-neighbor distance of `n` uniform points is roughly
/// `NN_UNIFORM / sqrt(n)`. The statistic is `ratio - 1`: clumped -> -1,
/// uniform -> 0.
pub const NN_UNIFORM: f64 = 0.5;
/// Radial spread map: `5 * rms_radius - 1`, so 0 -> -1 and 0.4 -> 1.
pub const SPREAD_GAIN: f64 = 5.0;

/// Keyword table in the oracle basis: (stem, [stats 0..6, bias]).
///
/// A prompt token matches a row when it starts with the stem.
pub const KEYWORD_TABLE: [(&str, [f64; 7]); 6] = [
    ("cluster", [-1.0, 0.0, 0.0, -1.0, 0.0, -1.0, 1.0]),
    ("scatter", [1.0, -0.5, 0.0, 1.0, 0.0, 1.0, 1.0]),
    ("flow", [0.0, 1.0, 0.0, 0.0, 0.5, 0.0, 1.0]),
    ("spin", [-0.3, -0.8, 1.0, -0.3, 0.3, -0.3, 1.0]),
    ("still", [0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0]),
    ("fast", [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]),
];

/// The six squashed statistics of one frame, in `[-1, 1]` each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorStats {
    pub values: [f64; 6],
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleEmbedder;

impl Embedder for OracleEmbedder {
    fn embed_text(&self, prompt: &str) -> Result<Embedding, SemanticError> {
        oracle_embed_text(prompt)
    }

    fn embed_frame(&self, frame: &FrameInput<'_>) -> Result<Embedding, SemanticError> {
        oracle_embed_image(frame.agents, frame.max_speed)
    }

    fn name(&self) -> &str {
        ORACLE_VERSION
    }

    fn needs_image(&self) -> bool {
        false
    }
}

pub fn oracle_embed_image(agents: &[AgentState], max_speed: f64) -> Result<Embedding, SemanticError> {
    let stats = behavior_stats(agents, max_speed)?;
    let mut v = vec![0.0; EMBEDDING_DIM];
    v[..6].copy_from_slice(&stats.values);
    v[BIAS_DIM] = 1.0;
    Embedding::from_raw(v)
}

/// Raw (unsquashed) mean nearest-neighbor distance on the torus, O(n²).
pub fn mean_nearest_neighbor_distance(positions: &[[f64; 2]]) -> f64 {
    let n = positions.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..n {
            if i != j {
                let d = torus_delta(positions[i], positions[j]);
                let d2 = d[0] * d[0] + d[1] * d[1];
                if d2 < best {
                    best = d2;
                }
            }
        }
        total += best.sqrt();
    }
    total / n as f64
}

/// Circular-mean centroid on the unit torus.
pub fn torus_centroid(positions: &[[f64; 2]]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (k, c) in out.iter_mut().enumerate() {
        let (mut s, mut co) = (0.0, 0.0);
        for p in positions {
            let a = p[k] * std::f64::consts::TAU;
            s += a.sin();
            co += a.cos();
        }
        let angle = s.atan2(co) / std::f64::consts::TAU;
        *c = crate::swarm::wrap_unit(angle);
    }
    out
}

pub fn behavior_stats(agents: &[AgentState], max_speed: f64) -> Result<BehaviorStats, SemanticError> {
    let n = agents.len();
    if n < 2 {
        return Err(SemanticError::InsufficientAgents(n));
    }
    let nf = n as f64;
    let positions: Vec<[f64; 2]> = agents.iter().map(|a| a.position).collect();

    let nn = mean_nearest_neighbor_distance(&positions);
    let s_nn = (nn * nf.sqrt() / NN_UNIFORM - 1.0).clamp(-1.0, 1.0);

    let mut heading = [0.0; 2];
    let mut speed_sum = 0.0;
    for a in agents {
        let s = (a.velocity[0] * a.velocity[0] + a.velocity[1] * a.velocity[1]).sqrt();
        speed_sum += s;
        if s > 0.0 {
            heading[0] += a.velocity[0] / s;
            heading[1] += a.velocity[1] / s;
        }
    }
    let polarization = ((heading[0] * heading[0] + heading[1] * heading[1]).sqrt() / nf).min(1.0);
    let s_pol = 2.0 * polarization - 1.0;

    let centroid = torus_centroid(&positions);
    let mut ang = 0.0;
    let mut r2_sum = 0.0;
    let mut hist = [0u32; OCCUPANCY_GRID * OCCUPANCY_GRID];
    for a in agents {
        let r = torus_delta(centroid, a.position);
        let r_len2 = r[0] * r[0] + r[1] * r[1];
        r2_sum += r_len2;
        let v = a.velocity;
        let denom = r_len2.sqrt() * (v[0] * v[0] + v[1] * v[1]).sqrt();
        if denom > 1e-15 {
            ang += (r[0] * v[1] - r[1] * v[0]) / denom;
        }
        let gx = occupancy_cell(r[0]);
        let gy = occupancy_cell(r[1]);
        hist[gy * OCCUPANCY_GRID + gx] += 1;
    }
    let s_ang = (ang / nf).clamp(-1.0, 1.0);

    let mut entropy = 0.0;
    for &count in &hist {
        if count > 0 {
            let p = count as f64 / nf;
            entropy -= p * p.ln();
        }
    }
    let entropy = entropy / ((OCCUPANCY_GRID * OCCUPANCY_GRID) as f64).ln();
    let s_ent = (2.0 * entropy - 1.0).clamp(-1.0, 1.0);

    let speed_ratio = if max_speed > 0.0 {
        (speed_sum / nf / max_speed).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let s_speed = 2.0 * speed_ratio - 1.0;

    let spread = (r2_sum / nf).sqrt();
    let s_spread = (SPREAD_GAIN * spread - 1.0).clamp(-1.0, 1.0);

    Ok(BehaviorStats {
        values: [s_nn, s_pol, s_ang, s_ent, s_speed, s_spread],
    })
}

/// Histogram cell of a centroid-relative offset in `[-0.5, 0.5]`.
#[inline]
fn occupancy_cell(offset: f64) -> usize {
    let c = ((offset + 0.5) * OCCUPANCY_GRID as f64).floor();
    c.clamp(0.0, (OCCUPANCY_GRID - 1) as f64) as usize
}

pub fn oracle_embed_text(prompt: &str) -> Result<Embedding, SemanticError> {
    let lowered = prompt.trim().to_lowercase();
    if lowered.is_empty() {
        return Err(SemanticError::EmptyPrompt);
    }
    let tokens: Vec<&str> = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    let mut acc = [0.0; 7];
    let mut matched = 0usize;
    for (stem, row) in KEYWORD_TABLE.iter() {
        if tokens.iter().any(|t| t.starts_with(stem)) {
            matched += 1;
            for (a, r) in acc.iter_mut().zip(row) {
                *a += r;
            }
        }
    }
    let mut v = vec![0.0; EMBEDDING_DIM];
    if matched > 0 {
        for (dst, a) in v.iter_mut().zip(acc) {
            *dst = a / matched as f64;
        }
    } else {
        let digest = Sha256::digest(lowered.as_bytes());
        let mut seed = [0u8; 8];
        seed.copy_from_slice(&digest[..8]);
        let mut rng = rng_from_seed(u64::from_le_bytes(seed));
        for dst in &mut v[HASH_DIMS] {
            *dst = rng.random::<f64>() * 2.0 - 1.0;
        }
    }
    Embedding::from_raw(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::cosine_similarity;
    use crate::swarm::{init_world, SwarmParams};

    fn still(x: f64, y: f64, v: [f64; 2]) -> AgentState {
        AgentState {
            position: [x, y],
            velocity: v,
        }
    }

    #[test]
    fn coincident_agents_hit_minimum_spacing() {
        let agents = vec![still(0.3, 0.3, [0.01, 0.0]); 20];
        let s = behavior_stats(&agents, 0.02).unwrap();
        assert_eq!(s.values[STAT_NEAREST_NEIGHBOR], -1.0);
    }

    #[test]
    fn aligned_velocities_hit_maximum_polarization() {
        let w = init_world(&SwarmParams::default(), 50, 1).unwrap();
        let agents: Vec<_> = w.agents.iter().map(|a| still(a.position[0], a.position[1], [0.003, -0.004])).collect();
        let s = behavior_stats(&agents, 0.01).unwrap();
        assert!((s.values[STAT_POLARIZATION] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn needs_two_agents() {
        let agents = vec![still(0.5, 0.5, [0.0, 0.0])];
        assert_eq!(oracle_embed_image(&agents, 0.1), Err(SemanticError::InsufficientAgents(1)));
    }

    #[test]
    fn frame_embeddings_are_unit_norm() {
        for seed in 0..100 {
            let p = SwarmParams::default();
            let w = init_world(&p, 2 + seed as usize, seed).unwrap();
            let e = oracle_embed_image(&w.agents, p.max_speed).unwrap();
            let norm: f64 = e.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            assert_eq!(e.dim(), EMBEDDING_DIM);
        }
    }

    #[test]
    fn cluster_keyword_is_table_row() {
        let e = oracle_embed_text("cluster").unwrap();
        let row = KEYWORD_TABLE[0].1;
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for k in 0..7 {
            assert!((e.as_slice()[k] - row[k] / norm).abs() < 1e-15);
        }
        assert!(e.as_slice()[7..].iter().all(|&v| v == 0.0));
        assert_eq!(oracle_embed_text("Clustering!").unwrap(), e);
    }

    #[test]
    fn two_keywords_average() {
        let e = oracle_embed_text("cluster and spin").unwrap();
        let mean: Vec<f64> = (0..7).map(|k| (KEYWORD_TABLE[0].1[k] + KEYWORD_TABLE[3].1[k]) / 2.0).collect();
        let mut padded = vec![0.0; EMBEDDING_DIM];
        padded[..7].copy_from_slice(&mean);
        let expect = Embedding::from_raw(padded).unwrap();
        assert!((cosine_similarity(&e, &expect).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_prompt_hashes_deterministically() {
        let a = oracle_embed_text("a quiet murmuration at dusk").unwrap();
        let b = oracle_embed_text("a quiet murmuration at dusk").unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice()[..7].iter().all(|&v| v == 0.0));
        assert!(a.as_slice()[71..].iter().all(|&v| v == 0.0));
        assert_ne!(a, oracle_embed_text("something else").unwrap());
    }

    #[test]
    fn empty_prompt_rejected() {
        assert_eq!(oracle_embed_text("   "), Err(SemanticError::EmptyPrompt));
    }
}
