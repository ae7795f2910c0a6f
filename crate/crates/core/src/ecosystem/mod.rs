//! A shared world where finished lifeforms live together.
//!
//! Each admitted [`Lifeform`] brings its evolved parameters, its prompt
//! embedding and a cohort of agents. Agents steer by their own species'
//! rules; how they treat agents of another species depends on the cosine
//! affinity of the two prompt embeddings:
//!
//! | affinity      | cross-species neighbours |
//! |---------------|--------------------------|
//! | `a >= 0.8`    | flock with them (alignment, cohesion, normal separation) |
//! | `a <= 0.2`    | separation only, three times as strong |
//! | otherwise     | ignored |
//!
//! Every [`EPOCH_STEPS`] steps the world checks for hybrids between close,
//! similar species and re-derives population-level meta-rules from every
//! lifeform admitted so far, then applies them.

mod kmeans;
mod meta;
mod pca;
mod snapshot;

use std::collections::BTreeSet;
use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::rng::{rng_from_seed, SimRng};
use crate::semantic::{cosine_similarity, Embedding, SemanticError};
use crate::semantic::oracle::torus_centroid;
use crate::swarm::{
    draw_noise, torus_delta, torus_dist2, validate_params, wrap_point, AgentState, SpatialGrid, Steering,
    SwarmError, SwarmParams, SEPARATION_RADIUS_FRACTION,
};

pub use kmeans::{kmeans, KMeans, KMEANS_MAX_ITERATIONS};
pub use meta::{
    apply_meta_rules, extract_meta_rules, synthesize, MetaRule, Synthesis, MAX_EPOCH_CHANGE, META_RATE,
    MIN_EXPLAINED_RATIO, MIN_LIFEFORMS_FOR_RULES,
};
pub use pca::{pca, Pca};
pub use snapshot::{render_snapshot, EcosystemState, LifeformSummary, PALETTE};

pub const DEFAULT_CAPACITY: usize = 50_000;
pub const EPOCH_STEPS: u64 = 600;
pub const MERGE_AFFINITY: f64 = 0.8;
pub const REPEL_AFFINITY: f64 = 0.2;
pub const REPEL_SEPARATION_FACTOR: f64 = 3.0;
pub const HYBRID_PROBABILITY: f64 = 0.25;
pub const HYBRID_CENTROID_DISTANCE: f64 = 0.1;
pub const SPAWN_RADIUS: f64 = 0.1;
pub const DEFAULT_MAX_RULES: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EcosystemError {
    #[error("admitting {requested} agents would exceed capacity ({available} free)")]
    CapacityExceeded { requested: usize, available: usize },
    #[error("a lifeform needs at least one agent")]
    EmptyCohort,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionError { expected: usize, got: usize },
    #[error("need at least 2 rows, got {0}")]
    InsufficientData(usize),
    #[error("cannot form {k} clusters from {rows} rows")]
    TooManyClusters { k: usize, rows: usize },
    #[error("no lifeform with id {0}")]
    UnknownLifeform(String),
    #[error(transparent)]
    Swarm(#[from] SwarmError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lifeform {
    pub id: String,
    pub params: SwarmParams,
    pub prompt_embedding: Embedding,
    pub owner: String,
    pub agent_indices: Range<usize>,
    pub color_index: usize,
    /// Ids of the two parents for hybrids.
    pub parents: Option<(String, String)>,
    pub admitted_step: u64,
}

/// How agents of species `a` treat neighbours of species `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Interaction {
    /// Same species, or affinity at least [`MERGE_AFFINITY`].
    Flock,
    /// Affinity at most [`REPEL_AFFINITY`]: separation only, boosted.
    Repel,
    Ignore,
}

impl Interaction {
    /// Flocking weight and separation scale applied to such a neighbour.
    #[inline]
    pub fn weights(self) -> (f64, f64) {
        match self {
            Interaction::Flock => (1.0, 1.0),
            Interaction::Repel => (0.0, REPEL_SEPARATION_FACTOR),
            Interaction::Ignore => (0.0, 0.0),
        }
    }

    pub fn from_affinity(a: f64) -> Self {
        if a >= MERGE_AFFINITY {
            Interaction::Flock
        } else if a <= REPEL_AFFINITY {
            Interaction::Repel
        } else {
            Interaction::Ignore
        }
    }
}

/// Events produced at epoch boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EcosystemEvent {
    Hybridized { child: String, parents: (String, String) },
    RulesApplied { epoch: u64, rules: usize },
}

#[derive(Debug, Clone)]
pub struct EcosystemWorld {
    pub agents: Vec<AgentState>,
    /// Index into `lifeforms` for every agent.
    pub species: Vec<u32>,
    pub lifeforms: Vec<Lifeform>,
    pub capacity: usize,
    pub step_count: u64,
    pub epoch: u64,
    pub rng: SimRng,
    pub meta_rules: Vec<MetaRule>,
    pub themes: Vec<usize>,
    pub max_rules: usize,
    /// Parameters of every lifeform ever admitted, in admission order.
    pub history: Vec<SwarmParams>,
    /// Row-major `L × L` pair table.
    interactions: Vec<Interaction>,
    hybridized: BTreeSet<(usize, usize)>,
    next_id: u64,
    pub events: Vec<EcosystemEvent>,
}

impl EcosystemWorld {
    pub fn new(capacity: usize, seed: u64) -> Self {
        EcosystemWorld {
            agents: Vec::new(),
            species: Vec::new(),
            lifeforms: Vec::new(),
            capacity,
            step_count: 0,
            epoch: 0,
            rng: rng_from_seed(seed),
            meta_rules: Vec::new(),
            themes: Vec::new(),
            max_rules: DEFAULT_MAX_RULES,
            history: Vec::new(),
            interactions: Vec::new(),
            hybridized: BTreeSet::new(),
            next_id: 0,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn lifeform(&self, id: &str) -> Option<&Lifeform> {
        self.lifeforms.iter().find(|l| l.id == id)
    }

    pub fn interaction(&self, a: usize, b: usize) -> Interaction {
        self.interactions[a * self.lifeforms.len() + b]
    }

    fn rebuild_interactions(&mut self) -> Result<(), EcosystemError> {
        let l = self.lifeforms.len();
        let mut table = Vec::with_capacity(l * l);
        for a in 0..l {
            for b in 0..l {
                table.push(if a == b {
                    Interaction::Flock
                } else {
                    let aff = cosine_similarity(&self.lifeforms[a].prompt_embedding, &self.lifeforms[b].prompt_embedding)?;
                    Interaction::from_affinity(aff)
                });
            }
        }
        self.interactions = table;
        Ok(())
    }

    fn fresh_id(&mut self) -> String {
        self.next_id += 1;
        format!("lf-{}", self.next_id)
    }

    fn spawn(
        &mut self,
        params: SwarmParams,
        prompt_embedding: Embedding,
        owner: &str,
        n_agents: usize,
        center: [f64; 2],
        parents: Option<(String, String)>,
    ) -> Result<Lifeform, EcosystemError> {
        let slot = self.lifeforms.len();
        let start = self.agents.len();
        for _ in 0..n_agents {
            let r = SPAWN_RADIUS * self.rng.random::<f64>().sqrt();
            let t = self.rng.random::<f64>() * std::f64::consts::TAU;
            let heading = self.rng.random::<f64>() * std::f64::consts::TAU;
            let speed = params.max_speed * (1.0 - self.rng.random::<f64>());
            self.agents.push(AgentState {
                position: wrap_point([center[0] + r * t.cos(), center[1] + r * t.sin()]),
                velocity: [speed * heading.cos(), speed * heading.sin()],
            });
            self.species.push(slot as u32);
        }
        let lifeform = Lifeform {
            id: self.fresh_id(),
            params,
            prompt_embedding,
            owner: owner.to_string(),
            agent_indices: start..self.agents.len(),
            color_index: slot % PALETTE.len(),
            parents,
            admitted_step: self.step_count,
        };
        self.lifeforms.push(lifeform.clone());
        self.history.push(params);
        self.rebuild_interactions()?;
        Ok(lifeform)
    }

    /// Adds a lifeform with `n_agents` agents placed uniformly in a disc of
    /// radius [`SPAWN_RADIUS`] around a random centre.
    pub fn admit_lifeform(
        &mut self,
        params: &SwarmParams,
        prompt_embedding: Embedding,
        owner: &str,
        n_agents: usize,
    ) -> Result<Lifeform, EcosystemError> {
        if n_agents == 0 {
            return Err(EcosystemError::EmptyCohort);
        }
        let available = self.capacity.saturating_sub(self.agents.len());
        if n_agents > available {
            return Err(EcosystemError::CapacityExceeded {
                requested: n_agents,
                available,
            });
        }
        let v = validate_params(&params.to_array())?;
        let center = [self.rng.random::<f64>(), self.rng.random::<f64>()];
        self.spawn(v.params, prompt_embedding, owner, n_agents, center, None)
    }

    /// Replaces the world's agents with a single species, keeping `rng` as
    /// given. Mostly useful for comparing against a plain swarm.
    pub fn from_single_species(
        agents: Vec<AgentState>,
        params: SwarmParams,
        prompt_embedding: Embedding,
        rng: SimRng,
    ) -> Result<Self, EcosystemError> {
        let mut w = EcosystemWorld::new(agents.len().max(DEFAULT_CAPACITY), 0);
        w.rng = rng;
        w.species = vec![0; agents.len()];
        let id = w.fresh_id();
        w.lifeforms.push(Lifeform {
            id,
            params,
            prompt_embedding,
            owner: String::new(),
            agent_indices: 0..agents.len(),
            color_index: 0,
            parents: None,
            admitted_step: 0,
        });
        w.agents = agents;
        w.history.push(params);
        w.rebuild_interactions()?;
        Ok(w)
    }

    /// Current centroid of each lifeform's agents, on the torus.
    pub fn centroids(&self) -> Vec<[f64; 2]> {
        self.lifeforms
            .iter()
            .map(|l| {
                let pts: Vec<[f64; 2]> = self.agents[l.agent_indices.clone()].iter().map(|a| a.position).collect();
                torus_centroid(&pts)
            })
            .collect()
    }

    /// Advances one step; at epoch boundaries also hybridizes and applies
    /// meta-rules.
    pub fn step(&mut self) -> Result<(), EcosystemError> {
        ecosystem_step(self);
        if self.step_count.is_multiple_of(EPOCH_STEPS) {
            self.epoch += 1;
            self.hybridize()?;
            self.refresh_meta_rules();
        }
        Ok(())
    }

    fn hybridize(&mut self) -> Result<(), EcosystemError> {
        let l = self.lifeforms.len();
        let centroids = self.centroids();
        for a in 0..l {
            for b in (a + 1)..l {
                if self.hybridized.contains(&(a, b)) {
                    continue;
                }
                let aff = cosine_similarity(&self.lifeforms[a].prompt_embedding, &self.lifeforms[b].prompt_embedding)?;
                if aff < MERGE_AFFINITY
                    || torus_dist2(centroids[a], centroids[b]) >= HYBRID_CENTROID_DISTANCE * HYBRID_CENTROID_DISTANCE
                {
                    continue;
                }
                if self.rng.random::<f64>() >= HYBRID_PROBABILITY {
                    continue;
                }
                let (pa, pb) = (&self.lifeforms[a], &self.lifeforms[b]);
                let cohort = (pa.agent_indices.len().min(pb.agent_indices.len()) / 2).max(1);
                let available = self.capacity.saturating_sub(self.agents.len());
                if available == 0 {
                    return Ok(());
                }
                let cohort = cohort.min(available);
                let (xa, xb) = (pa.params.to_array(), pb.params.to_array());
                let mut blend = [0.0; 6];
                for k in 0..6 {
                    let w: f64 = self.rng.random();
                    blend[k] = w * xa[k] + (1.0 - w) * xb[k];
                }
                let params = validate_params(&blend)?.params;
                let embedding = Embedding::mean(&[pa.prompt_embedding.clone(), pb.prompt_embedding.clone()])?;
                let parents = (pa.id.clone(), pb.id.clone());
                let d = torus_delta(centroids[a], centroids[b]);
                let mid = wrap_point([centroids[a][0] + 0.5 * d[0], centroids[a][1] + 0.5 * d[1]]);
                let child = self.spawn(params, embedding, "hybrid", cohort, mid, Some(parents.clone()))?;
                self.hybridized.insert((a, b));
                self.events.push(EcosystemEvent::Hybridized { child: child.id, parents });
            }
        }
        Ok(())
    }

    fn refresh_meta_rules(&mut self) {
        let s = synthesize(&self.history, self.max_rules, self.epoch, self.epoch);
        self.meta_rules = s.rules;
        self.themes = s.themes;
        if self.meta_rules.is_empty() {
            return;
        }
        self.apply_rules_now();
        self.events.push(EcosystemEvent::RulesApplied {
            epoch: self.epoch,
            rules: self.meta_rules.len(),
        });
    }

    /// Applies the current meta-rules to every lifeform once.
    pub fn apply_rules_now(&mut self) {
        let params: Vec<SwarmParams> = self.lifeforms.iter().map(|l| l.params).collect();
        let updated = apply_meta_rules(&params, &self.meta_rules);
        for (l, p) in self.lifeforms.iter_mut().zip(updated) {
            l.params = p;
        }
    }

    /// Current registry and rules in export form.
    pub fn state(&self) -> EcosystemState {
        EcosystemState::of(self)
    }
}

/// One synchronous step of every agent. Noise is drawn for every agent in
/// index order before the (parallel) force computation, so the result does
/// not depend on thread count.
pub fn ecosystem_step(world: &mut EcosystemWorld) {
    let n = world.agents.len();
    world.step_count += 1;
    if n == 0 {
        return;
    }
    let noise: Vec<[f64; 2]> = (0..n).map(|_| draw_noise(&mut world.rng)).collect();
    let positions: Vec<[f64; 2]> = world.agents.iter().map(|a| a.position).collect();
    let max_radius = world
        .lifeforms
        .iter()
        .map(|l| l.params.neighbor_radius)
        .fold(0.0f64, f64::max);
    let grid = SpatialGrid::build(&positions, max_radius);
    let order = grid.entries();
    let sorted_pos: Vec<[f64; 2]> = order.iter().map(|&j| positions[j as usize]).collect();
    let sorted_vel: Vec<[f64; 2]> = order.iter().map(|&j| world.agents[j as usize].velocity).collect();
    let sorted_species: Vec<u32> = order.iter().map(|&j| world.species[j as usize]).collect();
    let n_species = world.lifeforms.len();
    let world_ref = &*world;

    let next: Vec<AgentState> = (0..n)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let s = world_ref.species[i] as usize;
            let params = &world_ref.lifeforms[s].params;
            let p = positions[i];
            let r2 = params.neighbor_radius * params.neighbor_radius;
            let sep_r = SEPARATION_RADIUS_FRACTION * params.neighbor_radius;
            let sep_r2 = sep_r * sep_r;
            let row = &world_ref.interactions[s * n_species..(s + 1) * n_species];
            let mut steer = Steering::default();
            grid.for_each_candidate_slot(p, params.neighbor_radius, |slots| {
                for k in slots {
                    if order[k] as usize == i {
                        continue;
                    }
                    let offset = torus_delta(p, sorted_pos[k]);
                    let d2 = offset[0] * offset[0] + offset[1] * offset[1];
                    let (flock, sep_scale) = row[sorted_species[k] as usize].weights();
                    steer.add(offset, d2, sorted_vel[k], r2, flock, sep_scale, sep_r2);
                }
            });
            let v = steer.finish(world_ref.agents[i].velocity, params, noise[i]);
            AgentState {
                position: wrap_point([p[0] + v[0], p[1] + v[1]]),
                velocity: v,
            }
        })
        .collect();
    world.agents = next;
}
