//! JSON bodies of the embedding service.
//!
//! `POST {endpoint}/v1/embed` with an [`EmbedRequest`]; a 200 response
//! carries an [`EmbedResponse`]. Image data is a base64 (standard alphabet,
//! padded) PNG.

use serde::{Deserialize, Serialize};

pub const EMBED_PATH: &str = "/v1/embed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub kind: EmbedKind,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embedding: Vec<f64>,
    pub model: String,
}
