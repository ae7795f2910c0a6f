//! Embeddings and the semantic fitness they feed.
//!
//! Anything that can embed both prompts and rendered frames into one space
//! implements [`Embedder`]. Two providers ship: [`OracleEmbedder`], a
//! deterministic statistic-based stand-in, and [`RemoteEmbedder`], an HTTP
//! client for an external image/text model.

mod embedding;
pub mod oracle;
pub mod protocol;
mod remote;

use thiserror::Error;

use crate::render::ImageRGB;
use crate::swarm::AgentState;

pub use embedding::{cosine_similarity, semantic_loss, Embedding, SemanticScore, EMBEDDING_DIM};
pub use oracle::{oracle_embed_image, oracle_embed_text, OracleEmbedder};
pub use remote::{RemoteConfig, RemoteEmbedder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionError { expected: usize, got: usize },
    #[error("no embeddings given")]
    EmptyInput,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("frame has {0} agents, at least 2 are needed")]
    InsufficientAgents(usize),
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(&'static str),
    #[error("embedding service failed after {attempts} attempts: {message}")]
    EmbedServiceError { attempts: u32, message: String },
    #[error("this embedder needs a rendered image")]
    MissingImage,
    #[error("embedding service protocol violation: {0}")]
    ProtocolError(String),
}

/// What an embedder gets to see of a rendered frame.
///
/// Model-backed providers look at `image`; the oracle reads agent state
/// directly. Callers may leave `image` empty for providers whose
/// [`Embedder::needs_image`] is false.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    pub agents: &'a [AgentState],
    pub max_speed: f64,
    pub image: Option<&'a ImageRGB>,
}

pub trait Embedder: Send + Sync {
    fn embed_text(&self, prompt: &str) -> Result<Embedding, SemanticError>;

    fn embed_frame(&self, frame: &FrameInput<'_>) -> Result<Embedding, SemanticError>;

    /// Short identifier of the provider, written to run logs.
    fn name(&self) -> &str;

    /// Whether [`Embedder::embed_frame`] reads pixels.
    fn needs_image(&self) -> bool {
        true
    }
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn embed_text(&self, prompt: &str) -> Result<Embedding, SemanticError> {
        (**self).embed_text(prompt)
    }

    fn embed_frame(&self, frame: &FrameInput<'_>) -> Result<Embedding, SemanticError> {
        (**self).embed_frame(frame)
    }

    fn name(&self) -> &str {
        (**self).name()
    }

    fn needs_image(&self) -> bool {
        (**self).needs_image()
    }
}
