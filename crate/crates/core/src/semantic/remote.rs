use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine;

use super::protocol::{EmbedKind, EmbedRequest, EmbedResponse, EMBED_PATH};
use super::{Embedder, Embedding, FrameInput, SemanticError};
use crate::render::encode_png;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8000`.
    pub endpoint: String,
    /// Retries after the first failed attempt.
    pub max_retries: u32,
    /// Delay before the first retry; doubles after each further failure.
    pub backoff: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            max_retries: 3,
            backoff: Duration::from_millis(100),
            timeout: Duration::from_secs(30),
            max_in_flight: 8,
        }
    }
}

/// Blocking client for the embedding service.
pub struct RemoteEmbedder {
    config: RemoteConfig,
    url: String,
    agent: ureq::Agent,
    slots: Slots,
}

impl std::fmt::Debug for RemoteEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEmbedder").field("config", &self.config).finish()
    }
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        let url = format!("{}{}", config.endpoint.trim_end_matches('/'), EMBED_PATH);
        let slots = Slots::new(config.max_in_flight.max(1));
        RemoteEmbedder {
            config,
            url,
            agent,
            slots,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// One logical embedding request. Text payloads are UTF-8, image payloads
    /// PNG bytes. Transport failures and non-200 statuses are retried with
    /// exponential backoff; malformed or wrong-length responses are not.
    pub fn remote_embed(&self, kind: EmbedKind, payload: &[u8]) -> Result<Embedding, SemanticError> {
        let data = match kind {
            EmbedKind::Text => std::str::from_utf8(payload)
                .map_err(|_| SemanticError::ProtocolError("text payload is not UTF-8".into()))?
                .to_owned(),
            EmbedKind::Image => base64::engine::general_purpose::STANDARD.encode(payload),
        };
        let request = EmbedRequest { kind, data };

        let _slot = self.slots.acquire();
        let mut delay = self.config.backoff;
        let mut last_error = String::new();
        let attempts = self.config.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(delay);
                delay = delay.saturating_mul(2);
            }
            match self.agent.post(&self.url).send_json(&request) {
                Ok(mut resp) if resp.status().as_u16() == 200 => {
                    let body = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| SemanticError::ProtocolError(format!("reading body: {e}")))?;
                    return parse_response(&body);
                }
                Ok(resp) => last_error = format!("HTTP {}", resp.status()),
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(SemanticError::EmbedServiceError {
            attempts,
            message: last_error,
        })
    }
}

fn parse_response(body: &str) -> Result<Embedding, SemanticError> {
    let resp: EmbedResponse =
        serde_json::from_str(body).map_err(|e| SemanticError::ProtocolError(format!("bad response JSON: {e}")))?;
    Embedding::checked(resp.embedding).map_err(|e| match e {
        SemanticError::DimensionError { got, .. } => {
            SemanticError::ProtocolError(format!("embedding has {got} values, expected 512"))
        }
        other => SemanticError::ProtocolError(other.to_string()),
    })
}

impl Embedder for RemoteEmbedder {
    fn embed_text(&self, prompt: &str) -> Result<Embedding, SemanticError> {
        if prompt.trim().is_empty() {
            return Err(SemanticError::EmptyPrompt);
        }
        self.remote_embed(EmbedKind::Text, prompt.as_bytes())
    }

    fn embed_frame(&self, frame: &FrameInput<'_>) -> Result<Embedding, SemanticError> {
        let image = frame.image.ok_or(SemanticError::MissingImage)?;
        self.remote_embed(EmbedKind::Image, &encode_png(image))
    }

    fn name(&self) -> &str {
        "remote"
    }
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_is_renormalized() {
        let scale = 0.97 / (512f64).sqrt();
        let body = serde_json::json!({ "embedding": vec![scale; 512], "model": "m" }).to_string();
        let e = parse_response(&body).unwrap();
        let norm: f64 = e.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_length_is_protocol_error() {
        let body = serde_json::json!({ "embedding": vec![0.1; 768], "model": "m" }).to_string();
        assert!(matches!(parse_response(&body), Err(SemanticError::ProtocolError(_))));
        assert!(matches!(parse_response("{\"embedding\": 3}"), Err(SemanticError::ProtocolError(_))));
    }
}
