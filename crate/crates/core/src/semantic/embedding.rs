use serde::{Deserialize, Serialize};

use super::SemanticError;

/// Dimension of the shared image/text embedding space.
pub const EMBEDDING_DIM: usize = 512;

/// Unit-norm embedding vector.
///
/// Construction always normalizes, so any `Embedding` has L2 norm 1 up to
/// rounding. The fitness pipeline expects [`EMBEDDING_DIM`] entries; use
/// [`Embedding::checked`] where that has to be enforced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values` to unit length.
    pub fn from_raw(mut values: Vec<f64>) -> Result<Self, SemanticError> {
        if values.is_empty() {
            return Err(SemanticError::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SemanticError::InvalidEmbedding("non-finite entry"));
        }
        let norm = l2(&values);
        if !(norm > 0.0) {
            return Err(SemanticError::InvalidEmbedding("zero vector"));
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Embedding(values))
    }

    /// Like [`from_raw`](Self::from_raw) but requires exactly
    /// [`EMBEDDING_DIM`] entries.
    pub fn checked(values: Vec<f64>) -> Result<Self, SemanticError> {
        if values.len() != EMBEDDING_DIM {
            return Err(SemanticError::DimensionError {
                expected: EMBEDDING_DIM,
                got: values.len(),
            });
        }
        Self::from_raw(values)
    }

    /// Standard basis vector `e_k` of length `dim`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        Embedding(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn negated(&self) -> Self {
        Embedding(self.0.iter().map(|v| -v).collect())
    }

    /// Normalized mean of several embeddings of equal dimension.
    pub fn mean(items: &[Embedding]) -> Result<Self, SemanticError> {
        let first = items.first().ok_or(SemanticError::EmptyInput)?;
        let mut acc = vec![0.0; first.dim()];
        for e in items {
            check_dims(first, e)?;
            for (a, v) in acc.iter_mut().zip(&e.0) {
                *a += v;
            }
        }
        Self::from_raw(acc)
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = SemanticError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::from_raw(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

pub(crate) fn l2(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v * v).sqrt()
}

fn check_dims(a: &Embedding, b: &Embedding) -> Result<(), SemanticError> {
    if a.dim() != b.dim() {
        return Err(SemanticError::DimensionError {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Dot product of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, SemanticError> {
    check_dims(a, b)?;
    let dot = a.0.iter().zip(&b.0).fold(0.0, |acc, (x, y)| acc + x * y);
    Ok(dot.clamp(-1.0, 1.0))
}

/// Semantic distance of a rendered candidate to its prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticScore {
    /// `1 - similarity`, in `[0, 2]`.
    pub loss: f64,
    pub similarity: f64,
}

impl SemanticScore {
    pub fn from_similarity(similarity: f64) -> Self {
        SemanticScore {
            loss: 1.0 - similarity,
            similarity,
        }
    }
}

/// Scores frames against a prompt: the frame embeddings are averaged and
/// renormalized, then compared by cosine.
pub fn semantic_loss(frame_embeddings: &[Embedding], prompt_embedding: &Embedding) -> Result<SemanticScore, SemanticError> {
    let mean = Embedding::mean(frame_embeddings)?;
    let similarity = cosine_similarity(&mean, prompt_embedding)?;
    Ok(SemanticScore::from_similarity(similarity))
}
