use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, KMeans};
use super::pca::pca;
use crate::swarm::{denormalize, validate_params, SwarmParams, PARAM_DIM};

/// Below this many lifeforms no rules are synthesized.
pub const MIN_LIFEFORMS_FOR_RULES: usize = 3;
/// Components explaining less than this share of variance are dropped.
pub const MIN_EXPLAINED_RATIO: f64 = 0.2;
/// Fraction of the projected deviation removed per epoch at strength 1.
pub const META_RATE: f64 = 0.1;
/// Cap on any single normalized coordinate's change per epoch.
pub const MAX_EPOCH_CHANGE: f64 = 0.1;

/// A principal direction of the lifeform population along which every
/// lifeform is pulled toward the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRule {
    /// Unit vector in normalized parameter space.
    pub component: [f64; PARAM_DIM],
    pub explained_variance_ratio: f64,
    pub strength: f64,
    pub created_epoch: u64,
}

/// Rules plus the clustering they were derived alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthesis {
    pub rules: Vec<MetaRule>,
    /// Cluster ("theme") of each input lifeform; empty when too few.
    pub themes: Vec<usize>,
    pub theme_centroids: Vec<Vec<f64>>,
}

/// Clusters and PCA-reduces the normalized parameters of every lifeform seen
/// so far.
pub fn synthesize(history: &[SwarmParams], max_rules: usize, epoch: u64, seed: u64) -> Synthesis {
    let empty = Synthesis {
        rules: Vec::new(),
        themes: Vec::new(),
        theme_centroids: Vec::new(),
    };
    if history.len() < MIN_LIFEFORMS_FOR_RULES {
        return empty;
    }
    let data: Vec<Vec<f64>> = history.iter().map(|p| p.normalized().to_vec()).collect();
    let k = (history.len() / 3).clamp(1, 4);
    let themes = kmeans(&data, k, seed).ok();
    let Ok(reduced) = pca(&data, PARAM_DIM) else {
        return empty;
    };
    let rules = reduced
        .components
        .iter()
        .zip(&reduced.explained_variance_ratios)
        .filter(|(_, &r)| r >= MIN_EXPLAINED_RATIO)
        .take(max_rules)
        .map(|(c, &r)| {
            let mut component = [0.0; PARAM_DIM];
            component.copy_from_slice(c);
            MetaRule {
                component,
                explained_variance_ratio: r,
                strength: r,
                created_epoch: epoch,
            }
        })
        .collect();
    let (themes, theme_centroids) = match themes {
        Some(KMeans {
            assignments, centroids, ..
        }) => (assignments, centroids),
        None => (Vec::new(), Vec::new()),
    };
    Synthesis {
        rules,
        themes,
        theme_centroids,
    }
}

pub fn extract_meta_rules(history: &[SwarmParams], max_rules: usize) -> Vec<MetaRule> {
    synthesize(history, max_rules, 0, 0).rules
}

/// One epoch of mean reversion. Every lifeform's normalized parameters move
/// toward the population mean by `strength · 0.1` of their deviation along
/// each rule's component. If that would move any coordinate by more than
/// 0.1, the whole step is scaled down to fit, then the result is clamped to
/// bounds.
pub fn apply_meta_rules(params: &[SwarmParams], rules: &[MetaRule]) -> Vec<SwarmParams> {
    if rules.is_empty() || params.is_empty() {
        return params.to_vec();
    }
    let points: Vec<[f64; PARAM_DIM]> = params.iter().map(SwarmParams::normalized).collect();
    let mut mean = [0.0; PARAM_DIM];
    for p in &points {
        for k in 0..PARAM_DIM {
            mean[k] += p[k] / points.len() as f64;
        }
    }
    points
        .iter()
        .zip(params)
        .map(|(x, original)| {
            let mut step = [0.0; PARAM_DIM];
            for rule in rules {
                let s = rule.strength.clamp(0.0, 1.0);
                let proj: f64 = (0..PARAM_DIM).map(|k| (x[k] - mean[k]) * rule.component[k]).sum();
                for k in 0..PARAM_DIM {
                    step[k] -= s * META_RATE * proj * rule.component[k];
                }
            }
            let largest = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if largest == 0.0 {
                return *original;
            }
            let scale = if largest > MAX_EPOCH_CHANGE { MAX_EPOCH_CHANGE / largest } else { 1.0 };
            let mut moved = [0.0; PARAM_DIM];
            for k in 0..PARAM_DIM {
                moved[k] = (x[k] + scale * step[k]).clamp(0.0, 1.0);
            }
            validate_params(&denormalize(&moved)).map(|v| v.params).unwrap_or(*original)
        })
        .collect()
}
