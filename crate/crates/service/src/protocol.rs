//! JSON messages exchanged over the session WebSocket.
//!
//! Every frame is an object `{"v": 1, "type": ..., "seq": n, "payload": {...}}`.
//! `seq` increases strictly in each direction. Unknown payload fields are
//! ignored; a missing `v` is read as the current version.

use semswarm_core::swarm::SwarmParams;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const PROTOCOL_VERSION: u64 = 1;

/// Message types a client may send.
pub const CLIENT_TYPES: [&str; 7] = ["start_run", "pause", "resume", "refine", "branch", "admit", "ping"];

#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    /// `config` is a partial evolution config merged over the server defaults.
    StartRun { prompt: String, config: Option<Value> },
    Pause,
    Resume,
    Refine { prompt: String },
    /// Branches from a stored run, by default the session's latest one.
    Branch {
        run_id: Option<String>,
        generation: u64,
        candidate: usize,
    },
    /// Admits the best-so-far parameters of a run into the ecosystem.
    Admit { run_id: String, n_agents: Option<usize> },
    Ping,
}

impl ClientMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ClientMessage::StartRun { .. } => "start_run",
            ClientMessage::Pause => "pause",
            ClientMessage::Resume => "resume",
            ClientMessage::Refine { .. } => "refine",
            ClientMessage::Branch { .. } => "branch",
            ClientMessage::Admit { .. } => "admit",
            ClientMessage::Ping => "ping",
        }
    }

    /// The `(type, payload)` pair this message is sent as.
    pub fn to_parts(&self) -> (&'static str, Value) {
        let payload = match self {
            ClientMessage::StartRun { prompt, config } => {
                let mut m = Map::new();
                m.insert("prompt".into(), prompt.clone().into());
                if let Some(c) = config {
                    m.insert("config".into(), c.clone());
                }
                Value::Object(m)
            }
            ClientMessage::Refine { prompt } => serde_json::json!({ "prompt": prompt }),
            ClientMessage::Branch {
                run_id,
                generation,
                candidate,
            } => {
                let mut m = Map::new();
                if let Some(id) = run_id {
                    m.insert("run_id".into(), id.clone().into());
                }
                m.insert("generation".into(), (*generation).into());
                m.insert("candidate".into(), (*candidate).into());
                Value::Object(m)
            }
            ClientMessage::Admit { run_id, n_agents } => {
                let mut m = Map::new();
                m.insert("run_id".into(), run_id.clone().into());
                if let Some(n) = n_agents {
                    m.insert("n_agents".into(), (*n).into());
                }
                Value::Object(m)
            }
            ClientMessage::Pause | ClientMessage::Resume | ClientMessage::Ping => Value::Object(Map::new()),
        };
        (self.kind(), payload)
    }

    /// Serializes a complete client frame.
    pub fn encode(&self, seq: u64) -> String {
        let (kind, payload) = self.to_parts();
        frame(kind, seq, payload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadJson,
    UnknownType,
    BadPayload,
    UnsupportedVersion,
    BadSeq,
    NotPaused,
    NotRunning,
    RunActive,
    NoRun,
    NotFound,
    EmptyPrompt,
    Closed,
    EmbedFailed,
    CapacityExceeded,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::BadJson => "bad_json",
            ErrorCode::UnknownType => "unknown_type",
            ErrorCode::BadPayload => "bad_payload",
            ErrorCode::UnsupportedVersion => "unsupported_version",
            ErrorCode::BadSeq => "bad_seq",
            ErrorCode::NotPaused => "not_paused",
            ErrorCode::NotRunning => "not_running",
            ErrorCode::RunActive => "run_active",
            ErrorCode::NoRun => "no_run",
            ErrorCode::NotFound => "not_found",
            ErrorCode::EmptyPrompt => "empty_prompt",
            ErrorCode::Closed => "closed",
            ErrorCode::EmbedFailed => "embed_failed",
            ErrorCode::CapacityExceeded => "capacity_exceeded",
            ErrorCode::Internal => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}: {message}", code.as_str())]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub message: String,
}

impl ProtocolError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ProtocolError {
            code,
            message: message.into(),
        }
    }
}

#[derive(Deserialize)]
struct StartRunPayload {
    prompt: String,
    #[serde(default)]
    config: Option<Value>,
}

#[derive(Deserialize)]
struct RefinePayload {
    prompt: String,
}

#[derive(Deserialize)]
struct BranchPayload {
    #[serde(default)]
    run_id: Option<String>,
    generation: u64,
    candidate: usize,
}

#[derive(Deserialize)]
struct AdmitPayload {
    run_id: String,
    #[serde(default)]
    n_agents: Option<usize>,
}

fn payload<T: serde::de::DeserializeOwned>(kind: &str, value: Value) -> Result<T, ProtocolError> {
    serde_json::from_value(value).map_err(|e| ProtocolError::new(ErrorCode::BadPayload, format!("{kind}: {e}")))
}

/// Parses one client frame into its `seq` and message.
///
/// Envelope problems are reported before payload problems, so a frame with
/// an unknown type and a broken payload is `unknown_type`.
pub fn parse_client(text: &str) -> Result<(u64, ClientMessage), ProtocolError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ProtocolError::new(ErrorCode::BadJson, e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(ProtocolError::new(ErrorCode::BadJson, "frame must be a JSON object"));
    };
    match obj.get("v") {
        None => {}
        Some(v) if v.as_u64() == Some(PROTOCOL_VERSION) => {}
        Some(v) => {
            return Err(ProtocolError::new(
                ErrorCode::UnsupportedVersion,
                format!("protocol version {v} is not supported"),
            ))
        }
    }
    let kind = match obj.get("type") {
        Some(Value::String(s)) => s.clone(),
        _ => return Err(ProtocolError::new(ErrorCode::BadJson, "missing string field \"type\"")),
    };
    let seq = obj
        .get("seq")
        .and_then(Value::as_u64)
        .ok_or_else(|| ProtocolError::new(ErrorCode::BadJson, "missing integer field \"seq\""))?;
    let body = match obj.remove("payload") {
        None | Some(Value::Null) => Value::Object(Map::new()),
        Some(v @ Value::Object(_)) => v,
        Some(_) => return Err(ProtocolError::new(ErrorCode::BadPayload, "payload must be an object")),
    };
    let msg = match kind.as_str() {
        "start_run" => {
            let p: StartRunPayload = payload(&kind, body)?;
            if let Some(c) = &p.config {
                if !c.is_object() {
                    return Err(ProtocolError::new(ErrorCode::BadPayload, "config must be an object"));
                }
            }
            ClientMessage::StartRun {
                prompt: p.prompt,
                config: p.config,
            }
        }
        "pause" => ClientMessage::Pause,
        "resume" => ClientMessage::Resume,
        "refine" => ClientMessage::Refine {
            prompt: payload::<RefinePayload>(&kind, body)?.prompt,
        },
        "branch" => {
            let p: BranchPayload = payload(&kind, body)?;
            ClientMessage::Branch {
                run_id: p.run_id,
                generation: p.generation,
                candidate: p.candidate,
            }
        }
        "admit" => {
            let p: AdmitPayload = payload(&kind, body)?;
            ClientMessage::Admit {
                run_id: p.run_id,
                n_agents: p.n_agents,
            }
        }
        "ping" => ClientMessage::Ping,
        other => {
            return Err(ProtocolError::new(
                ErrorCode::UnknownType,
                format!("unknown message type {other:?}"),
            ))
        }
    };
    Ok((seq, msg))
}

/// One generation of a live run, as streamed to the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationUpdate {
    pub run_id: String,
    pub generation: u64,
    pub best_loss: f64,
    pub best_so_far_loss: f64,
    pub candidate_losses: Vec<f64>,
    pub diversity: f64,
    pub sigma: f64,
    pub noise_injected: bool,
    pub best_params: SwarmParams,
    /// Best candidate's frame, base64 PNG.
    pub frame_png: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Stopped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerMessage {
    /// First frame on every connection.
    Session { session_id: String },
    Ack {
        /// Type of the acknowledged client message.
        of: String,
        in_reply_to: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        run_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lifeform_id: Option<String>,
    },
    GenerationUpdate(GenerationUpdate),
    RunFinished {
        run_id: String,
        status: RunStatus,
        generations: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Error {
        code: ErrorCode,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        in_reply_to: Option<u64>,
    },
    Pong { in_reply_to: u64 },
}

impl ServerMessage {
    pub fn ack(of: &str, in_reply_to: u64) -> Self {
        ServerMessage::Ack {
            of: of.to_string(),
            in_reply_to,
            run_id: None,
            lifeform_id: None,
        }
    }

    pub fn error(err: &ProtocolError, in_reply_to: Option<u64>) -> Self {
        ServerMessage::Error {
            code: err.code,
            message: err.message.clone(),
            in_reply_to,
        }
    }

    pub fn encode(&self, seq: u64) -> String {
        let Value::Object(mut tagged) = serde_json::to_value(self).expect("server messages serialize") else {
            unreachable!("adjacently tagged enums serialize to objects")
        };
        let kind = tagged.remove("type").unwrap_or(Value::Null);
        let body = tagged.remove("payload").unwrap_or_else(|| Value::Object(Map::new()));
        let mut out = Map::new();
        out.insert("v".into(), PROTOCOL_VERSION.into());
        out.insert("type".into(), kind);
        out.insert("seq".into(), seq.into());
        out.insert("payload".into(), body);
        Value::Object(out).to_string()
    }
}

fn frame(kind: &str, seq: u64, payload: Value) -> String {
    serde_json::json!({ "v": PROTOCOL_VERSION, "type": kind, "seq": seq, "payload": payload }).to_string()
}

/// Parses one server frame (used by clients and tests).
pub fn parse_server(text: &str) -> Result<(u64, ServerMessage), ProtocolError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ProtocolError::new(ErrorCode::BadJson, e.to_string()))?;
    let seq = value
        .get("seq")
        .and_then(Value::as_u64)
        .ok_or_else(|| ProtocolError::new(ErrorCode::BadJson, "missing seq"))?;
    let tagged = serde_json::json!({
        "type": value.get("type").cloned().unwrap_or(Value::Null),
        "payload": value.get("payload").cloned().unwrap_or(Value::Null),
    });
    let msg = serde_json::from_value(tagged).map_err(|e| ProtocolError::new(ErrorCode::BadPayload, e.to_string()))?;
    Ok((seq, msg))
}
