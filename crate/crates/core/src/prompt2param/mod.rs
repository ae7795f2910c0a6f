//! Prompt → swarm parameters.
//!
//! Prompts are embedded by any [`Embedder`] and mapped linearly to the six
//! swarm coefficients by a ridge head trained on a prompt/parameter dataset.
//! The mapped vector seeds the optimizer (`theta_init`) and stays fixed as the
//! prior the search is biased toward (`theta_prompt`).

mod ridge;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::semantic::{Embedder, Embedding, SemanticError, EMBEDDING_DIM};
use crate::swarm::{normalize, validate_params, SwarmError, SwarmParams, PARAM_DIM};

pub use ridge::{fit_ridge, RidgeFit};

pub const MIN_TRAINING_ENTRIES: usize = 10;
pub const DEFAULT_RIDGE_LAMBDA: f64 = 0.1;

/// Dataset shipped with the crate.
pub const BUNDLED_DATASET_JSON: &str = include_str!("../../data/prompt_params.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MappingError {
    #[error("dataset has {0} entries, at least {MIN_TRAINING_ENTRIES} are required")]
    DatasetTooSmall(usize),
    #[error("normal equations are singular; use ridge_lambda > 0")]
    SingularSystem,
    #[error("ridge_lambda must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("rows have inconsistent lengths")]
    RaggedData,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionError { expected: usize, got: usize },
    #[error("dataset entry {index}: {reason}")]
    InvalidEntry { index: usize, reason: String },
    #[error("dataset is not valid JSON: {0}")]
    Parse(String),
    #[error("reading dataset: {0}")]
    Io(String),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Swarm(#[from] SwarmError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub prompt: String,
    pub params: [f64; PARAM_DIM],
}

/// Prompt/parameter pairs. JSON form: `[{"prompt": "...", "params": [6 numbers]}, ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptParamDataset {
    pub entries: Vec<DatasetEntry>,
}

impl PromptParamDataset {
    pub fn from_json(text: &str) -> Result<Self, MappingError> {
        let ds: PromptParamDataset = serde_json::from_str(text).map_err(|e| MappingError::Parse(e.to_string()))?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MappingError> {
        let text = std::fs::read_to_string(path).map_err(|e| MappingError::Io(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_DATASET_JSON).expect("bundled dataset is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every prompt is non-empty and every parameter vector is in bounds.
    pub fn validate(&self) -> Result<(), MappingError> {
        for (index, e) in self.entries.iter().enumerate() {
            if e.prompt.trim().is_empty() {
                return Err(MappingError::InvalidEntry {
                    index,
                    reason: "empty prompt".into(),
                });
            }
            let v = validate_params(&e.params).map_err(|err| MappingError::InvalidEntry {
                index,
                reason: err.to_string(),
            })?;
            if v.any_clamped() {
                return Err(MappingError::InvalidEntry {
                    index,
                    reason: "parameters out of bounds".into(),
                });
            }
        }
        Ok(())
    }
}

/// Linear head from a 512-d text embedding to raw swarm coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingModel {
    /// `512 × 6`, row-major: `weights[i * 6 + k]`.
    pub weights: Vec<f64>,
    pub intercept: [f64; PARAM_DIM],
    pub ridge_lambda: f64,
    /// Mean squared error over the training set, in normalized parameter units.
    pub training_loss: f64,
}

impl MappingModel {
    /// Prediction before clamping: `weightsᵀ · embedding + intercept`.
    pub fn predict_raw(&self, embedding: &[f64]) -> [f64; PARAM_DIM] {
        let mut out = self.intercept;
        for (i, &x) in embedding.iter().enumerate().take(EMBEDDING_DIM) {
            if x == 0.0 {
                continue;
            }
            for (k, o) in out.iter_mut().enumerate() {
                *o += x * self.weights[i * PARAM_DIM + k];
            }
        }
        out
    }

    /// Clamped prediction as swarm parameters.
    pub fn predict(&self, embedding: &Embedding) -> Result<SwarmParams, MappingError> {
        Ok(validate_params(&self.predict_raw(embedding.as_slice()))?.params)
    }
}

/// Output of [`encode_prompt`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptEncoding {
    /// Starting point of the search.
    pub theta_init: SwarmParams,
    /// Fixed prior the search is biased toward. Equal to `theta_init` when
    /// freshly encoded; the optimizer mean moves away from it over time.
    pub theta_prompt: [f64; PARAM_DIM],
}

fn embed_dataset(dataset: &PromptParamDataset, embedder: &dyn Embedder) -> Result<Vec<Vec<f64>>, MappingError> {
    dataset
        .entries
        .iter()
        .map(|e| {
            let emb = embedder.embed_text(&e.prompt)?;
            if emb.dim() != EMBEDDING_DIM {
                return Err(MappingError::DimensionError {
                    expected: EMBEDDING_DIM,
                    got: emb.dim(),
                });
            }
            Ok(emb.into_inner())
        })
        .collect()
}

/// Embeds every prompt and solves the ridge normal equations in closed form.
pub fn train_mapping(
    dataset: &PromptParamDataset,
    embedder: &dyn Embedder,
    ridge_lambda: f64,
) -> Result<MappingModel, MappingError> {
    if dataset.len() < MIN_TRAINING_ENTRIES {
        return Err(MappingError::DatasetTooSmall(dataset.len()));
    }
    dataset.validate()?;
    let features = embed_dataset(dataset, embedder)?;
    let targets: Vec<Vec<f64>> = dataset.entries.iter().map(|e| e.params.to_vec()).collect();
    let fit = fit_ridge(&features, &targets, ridge_lambda)?;

    let mut intercept = [0.0; PARAM_DIM];
    intercept.copy_from_slice(&fit.intercept);
    let mut model = MappingModel {
        weights: fit.weights,
        intercept,
        ridge_lambda,
        training_loss: 0.0,
    };
    model.training_loss = normalized_mse(&model, &features, dataset);
    Ok(model)
}

fn normalized_mse(model: &MappingModel, features: &[Vec<f64>], dataset: &PromptParamDataset) -> f64 {
    let mut total = 0.0;
    for (x, e) in features.iter().zip(&dataset.entries) {
        let p = normalize(&model.predict_raw(x));
        let t = normalize(&e.params);
        total += p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / PARAM_DIM as f64;
    }
    total / features.len() as f64
}

pub fn encode_prompt(model: &MappingModel, prompt: &str, embedder: &dyn Embedder) -> Result<PromptEncoding, MappingError> {
    if prompt.trim().is_empty() {
        return Err(SemanticError::EmptyPrompt.into());
    }
    let emb = embedder.embed_text(prompt)?;
    if emb.dim() != EMBEDDING_DIM {
        return Err(MappingError::DimensionError {
            expected: EMBEDDING_DIM,
            got: emb.dim(),
        });
    }
    let theta_init = model.predict(&emb)?;
    Ok(PromptEncoding {
        theta_init,
        theta_prompt: theta_init.to_array(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::OracleEmbedder;

    #[test]
    fn bundled_dataset_is_large_enough_and_valid() {
        let ds = PromptParamDataset::bundled();
        assert!(ds.len() >= 24);
        ds.validate().unwrap();
    }

    #[test]
    fn small_dataset_rejected() {
        let mut ds = PromptParamDataset::bundled();
        ds.entries.truncate(9);
        assert_eq!(
            train_mapping(&ds, &OracleEmbedder, 0.1),
            Err(MappingError::DatasetTooSmall(9))
        );
    }

    #[test]
    fn out_of_bounds_entry_rejected() {
        let text = r#"[{"prompt": "x", "params": [0.1, 0.05, 3.0, 1.0, 1.0, 0.01]}]"#;
        assert!(matches!(
            PromptParamDataset::from_json(text),
            Err(MappingError::InvalidEntry { index: 0, .. })
        ));
        assert!(matches!(PromptParamDataset::from_json("{"), Err(MappingError::Parse(_))));
    }

    #[test]
    fn encoding_is_deterministic_and_valid() {
        let model = train_mapping(&PromptParamDataset::bundled(), &OracleEmbedder, DEFAULT_RIDGE_LAMBDA).unwrap();
        let a = encode_prompt(&model, "swirling spin", &OracleEmbedder).unwrap();
        let b = encode_prompt(&model, "swirling spin", &OracleEmbedder).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.theta_init.to_array(), a.theta_prompt);
        let v = validate_params(&a.theta_init.to_array()).unwrap();
        assert!(!v.any_clamped());
        assert!(matches!(
            encode_prompt(&model, "", &OracleEmbedder),
            Err(MappingError::Semantic(SemanticError::EmptyPrompt))
        ));
    }
}
