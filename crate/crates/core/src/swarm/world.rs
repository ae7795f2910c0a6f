use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::grid::{torus_delta, wrap_point, SpatialGrid};
use super::{SwarmError, SwarmParams};
use crate::rng::{rng_from_seed, SimRng};

/// Separation acts inside this fraction of the neighbor radius.
pub const SEPARATION_RADIUS_FRACTION: f64 = 0.4;
/// Floor on squared distance in the separation term.
pub const SEPARATION_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

/// One snapshot of every agent.
pub type Frame = Vec<AgentState>;

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmWorld {
    pub agents: Vec<AgentState>,
    pub rng: SimRng,
    pub step_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `steps + 1` snapshots, starting with the initial state.
    pub frames: Vec<Frame>,
    pub params: SwarmParams,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Draws an agent uniformly on the torus with a uniformly random heading and
/// speed in `(0, max_speed]`.
pub(crate) fn random_agent(rng: &mut SimRng, max_speed: f64) -> AgentState {
    let x: f64 = rng.random();
    let y: f64 = rng.random();
    let heading = rng.random::<f64>() * std::f64::consts::TAU;
    let speed = max_speed * (1.0 - rng.random::<f64>());
    AgentState {
        position: [x, y],
        velocity: [speed * heading.cos(), speed * heading.sin()],
    }
}

pub fn init_world(params: &SwarmParams, n_agents: usize, seed: u64) -> Result<SwarmWorld, SwarmError> {
    if n_agents == 0 {
        return Err(SwarmError::EmptyWorld);
    }
    let mut rng = rng_from_seed(seed);
    let agents = (0..n_agents)
        .map(|_| random_agent(&mut rng, params.max_speed))
        .collect();
    Ok(SwarmWorld {
        agents,
        rng,
        step_count: 0,
    })
}

/// Indices `j != agent_index` strictly closer than `radius` on the torus,
/// in ascending order.
pub fn neighbors_within(world: &SwarmWorld, agent_index: usize, radius: f64) -> Result<Vec<usize>, SwarmError> {
    let n = world.agents.len();
    if agent_index >= n {
        return Err(SwarmError::IndexError { index: agent_index, len: n });
    }
    if !(radius > 0.0) {
        return Ok(Vec::new());
    }
    let positions: Vec<[f64; 2]> = world.agents.iter().map(|a| a.position).collect();
    let grid = SpatialGrid::build(&positions, radius);
    let p = positions[agent_index];
    let r2 = radius * radius;
    let mut out = Vec::new();
    grid.for_each_candidate(p, |j| {
        if j != agent_index && squared(torus_delta(p, positions[j])) < r2 {
            out.push(j);
        }
    });
    out.sort_unstable();
    Ok(out)
}

#[inline]
fn squared(d: [f64; 2]) -> f64 {
    d[0] * d[0] + d[1] * d[1]
}

/// Running sums for one agent's steering update.
///
/// Shared with the ecosystem so a single-species ecosystem reproduces the
/// plain swarm step bit for bit.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Steering {
    vel_sum: [f64; 2],
    offset_sum: [f64; 2],
    flock_count: f64,
    separation: [f64; 2],
}

impl Steering {
    /// Accumulates one candidate neighbour. `offset` is `p_j ⊖ p_i` and
    /// `dist2` its squared length. Candidates outside `radius2` contribute
    /// nothing; `flock` is 1 for neighbours that count toward alignment and
    /// cohesion and 0 otherwise.
    ///
    /// The radius test is a select rather than a branch since about a third
    /// of grid candidates are real neighbours, which defeats prediction.
    /// Adding a zero term leaves every sum unchanged.
    #[inline(always)]
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn add(
        &mut self,
        offset: [f64; 2],
        dist2: f64,
        neighbor_velocity: [f64; 2],
        radius2: f64,
        flock: f64,
        separation_scale: f64,
        separation_radius2: f64,
    ) {
        let w = if dist2 < radius2 { flock } else { 0.0 };
        self.vel_sum[0] += w * neighbor_velocity[0];
        self.vel_sum[1] += w * neighbor_velocity[1];
        self.offset_sum[0] += w * offset[0];
        self.offset_sum[1] += w * offset[1];
        self.flock_count += w;
        // the separation disc is small, so this branch is rarely taken
        if dist2 < separation_radius2 {
            let inv = separation_scale / dist2.max(SEPARATION_EPSILON);
            self.separation[0] -= offset[0] * inv;
            self.separation[1] -= offset[1] * inv;
        }
    }

    /// New velocity: steering terms plus noise, clamped to `max_speed`.
    #[inline]
    pub(crate) fn finish(&self, velocity: [f64; 2], params: &SwarmParams, noise: [f64; 2]) -> [f64; 2] {
        let mut v = velocity;
        if self.flock_count > 0.0 {
            let n = self.flock_count;
            for k in 0..2 {
                let mean_v = self.vel_sum[k] / n;
                let to_centroid = self.offset_sum[k] / n;
                v[k] += params.alignment_w * (mean_v - velocity[k]) + params.cohesion_w * to_centroid;
            }
        }
        for k in 0..2 {
            v[k] += params.separation_w * self.separation[k] + params.noise_sigma * noise[k];
        }
        clamp_speed(v, params.max_speed)
    }
}

#[inline]
pub(crate) fn clamp_speed(v: [f64; 2], max_speed: f64) -> [f64; 2] {
    let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if speed > max_speed {
        let s = max_speed / speed;
        [v[0] * s, v[1] * s]
    } else {
        v
    }
}

#[inline]
pub(crate) fn draw_noise(rng: &mut SimRng) -> [f64; 2] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// Advances every agent one step with synchronous (snapshot) updates.
pub fn step_world(world: &mut SwarmWorld, params: &SwarmParams) {
    let positions: Vec<[f64; 2]> = world.agents.iter().map(|a| a.position).collect();
    let radius = params.neighbor_radius;
    let r2 = radius * radius;
    let sep_r = SEPARATION_RADIUS_FRACTION * radius;
    let sep_r2 = sep_r * sep_r;
    let grid = SpatialGrid::build(&positions, radius);
    // neighbours read from cell-ordered copies; summation order is unchanged
    let order = grid.entries();
    let sorted_pos: Vec<[f64; 2]> = order.iter().map(|&j| positions[j as usize]).collect();
    let sorted_vel: Vec<[f64; 2]> = order.iter().map(|&j| world.agents[j as usize].velocity).collect();

    for (i, agent) in world.agents.iter_mut().enumerate() {
        let p = positions[i];
        let mut steer = Steering::default();
        grid.for_each_candidate_slot(p, radius, |slots| {
            for k in slots {
                if order[k] as usize == i {
                    continue;
                }
                let offset = torus_delta(p, sorted_pos[k]);
                steer.add(offset, squared(offset), sorted_vel[k], r2, 1.0, 1.0, sep_r2);
            }
        });
        let noise = draw_noise(&mut world.rng);
        let v = steer.finish(agent.velocity, params, noise);
        agent.velocity = v;
        agent.position = wrap_point([p[0] + v[0], p[1] + v[1]]);
    }
    world.step_count += 1;
}

pub fn run_simulation(params: &SwarmParams, n_agents: usize, steps: usize, seed: u64) -> Result<Trajectory, SwarmError> {
    let mut world = init_world(params, n_agents, seed)?;
    let mut frames = Vec::with_capacity(steps + 1);
    frames.push(world.agents.clone());
    for _ in 0..steps {
        step_world(&mut world, params);
        frames.push(world.agents.clone());
    }
    Ok(Trajectory {
        frames,
        params: *params,
    })
}
