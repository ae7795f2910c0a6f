use serde::{Deserialize, Serialize};

use super::{EcosystemWorld, MetaRule};
use crate::render::{rasterize_points, ImageRGB, RenderError};
use crate::swarm::SwarmParams;

/// Species colours, assigned by admission order and reused cyclically.
pub const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
];

/// Renders every agent in its species colour.
pub fn render_snapshot(world: &EcosystemWorld, size: usize) -> Result<ImageRGB, RenderError> {
    rasterize_points(
        world
            .agents
            .iter()
            .zip(&world.species)
            .map(|(a, &s)| (a.position, PALETTE[world.lifeforms[s as usize].color_index % PALETTE.len()])),
        size,
        None,
        0.0,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifeformSummary {
    pub id: String,
    pub owner: String,
    pub params: SwarmParams,
    pub color: [u8; 3],
    pub agent_start: usize,
    pub agent_end: usize,
    pub parents: Option<(String, String)>,
    pub centroid: [f64; 2],
}

/// JSON export of the registry and rules, without agent positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcosystemState {
    pub step_count: u64,
    pub epoch: u64,
    pub n_agents: usize,
    pub capacity: usize,
    pub lifeforms: Vec<LifeformSummary>,
    pub meta_rules: Vec<MetaRule>,
    /// Theme cluster of each lifeform in admission history.
    pub themes: Vec<usize>,
}

impl EcosystemState {
    pub fn of(world: &EcosystemWorld) -> Self {
        let centroids = world.centroids();
        EcosystemState {
            step_count: world.step_count,
            epoch: world.epoch,
            n_agents: world.agents.len(),
            capacity: world.capacity,
            lifeforms: world
                .lifeforms
                .iter()
                .zip(centroids)
                .map(|(l, centroid)| LifeformSummary {
                    id: l.id.clone(),
                    owner: l.owner.clone(),
                    params: l.params,
                    color: PALETTE[l.color_index % PALETTE.len()],
                    agent_start: l.agent_indices.start,
                    agent_end: l.agent_indices.end,
                    parents: l.parents.clone(),
                    centroid,
                })
                .collect(),
            meta_rules: world.meta_rules.clone(),
            themes: world.themes.clone(),
        }
    }
}
