//! HTTP and WebSocket front end.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Body;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use semswarm_core::ecosystem::EcosystemError;
use semswarm_core::evolution::{EmbedderChoice, EvolutionConfig};
use semswarm_core::prompt2param::{train_mapping, MappingError, PromptParamDataset, DEFAULT_RIDGE_LAMBDA};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::mpsc::{self, UnboundedSender};
use tokio::task::JoinHandle;

use crate::ecosystem::{AdmitError, EcosystemConfig, EcosystemHandle};
use crate::protocol::{parse_client, ClientMessage, ErrorCode, ProtocolError, ServerMessage};
use crate::runner::{merge_config, spawn_run, Control, RunEvent, RunHandle, RunShared, Setup};
use crate::session::{Action, Event, Session, SessionState};
use crate::store::{RunStore, StoreError};

/// Environment variable naming the embedding service base URL. When unset
/// the built-in oracle embedder is used.
pub const EMBED_ENDPOINT_ENV: &str = "SEMSWARM_EMBED_ENDPOINT";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no session {0}")]
    NotFound(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("training the prompt mapping: {0}")]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub store_dir: PathBuf,
    pub embedder: EmbedderChoice,
    /// Defaults for runs; clients override fields per run.
    pub evolution: EvolutionConfig,
    pub ecosystem: EcosystemConfig,
    /// Agents per admitted lifeform when the client does not say.
    pub admit_agents: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            store_dir: PathBuf::from("runs"),
            embedder: EmbedderChoice::Oracle,
            evolution: EvolutionConfig::default(),
            ecosystem: EcosystemConfig::default(),
            admit_agents: 500,
        }
    }
}

impl ServerConfig {
    /// Switches to the remote embedder if [`EMBED_ENDPOINT_ENV`] is set.
    pub fn with_env(mut self) -> Self {
        if let Ok(endpoint) = std::env::var(EMBED_ENDPOINT_ENV) {
            if !endpoint.trim().is_empty() {
                self.embedder = EmbedderChoice::Remote { endpoint };
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub state: SessionState,
    pub active_run: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
}

/// Every open session, keyed by its token.
#[derive(Debug, Default)]
pub struct SessionRegistry {
    sessions: Mutex<HashMap<String, SessionInfo>>,
}

impl SessionRegistry {
    /// Registers a session under a fresh random token.
    pub fn create(&self) -> String {
        let mut map = self.sessions.lock().expect("registry lock");
        let id = loop {
            let id = format!("{:032x}", rand::random::<u128>());
            if !map.contains_key(&id) {
                break id;
            }
        };
        let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        map.insert(
            id.clone(),
            SessionInfo {
                id: id.clone(),
                state: SessionState::Idle,
                active_run: None,
                created_at,
            },
        );
        id
    }

    pub fn get(&self, id: &str) -> Option<SessionInfo> {
        self.sessions.lock().expect("registry lock").get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn update(&self, id: &str, state: SessionState, active_run: Option<String>) {
        if let Some(info) = self.sessions.lock().expect("registry lock").get_mut(id) {
            info.state = state;
            info.active_run = active_run;
        }
    }

    pub fn close(&self, id: &str) -> Result<SessionInfo, ServiceError> {
        self.sessions
            .lock()
            .expect("registry lock")
            .remove(id)
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }
}

/// Server-wide state shared by every connection.
pub struct App {
    pub runs: RunShared,
    pub defaults: EvolutionConfig,
    pub ecosystem: EcosystemHandle,
    pub sessions: SessionRegistry,
    pub admit_agents: usize,
}

impl App {
    /// Opens the store, trains the prompt mapping and starts the ecosystem.
    /// Blocks while the mapping trains, which may call the embedding service.
    pub fn build(config: &ServerConfig) -> Result<Arc<App>, ServiceError> {
        let store = RunStore::open(&config.store_dir)?;
        let embedder = config.embedder.build();
        let mapping = train_mapping(&PromptParamDataset::bundled(), &*embedder, DEFAULT_RIDGE_LAMBDA)?;
        let mut defaults = config.evolution.clone();
        defaults.embedder = config.embedder.clone();
        Ok(Arc::new(App {
            runs: RunShared {
                store,
                mapping: Arc::new(mapping),
                embedder,
            },
            defaults,
            ecosystem: EcosystemHandle::spawn(config.ecosystem.clone()),
            sessions: SessionRegistry::default(),
            admit_agents: config.admit_agents,
        }))
    }
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/ws", get(ws_upgrade))
        .route("/v1/runs", get(list_runs))
        .route("/v1/runs/{id}", get(get_run))
        .route("/v1/ecosystem/state", get(ecosystem_state))
        .route("/v1/ecosystem/snapshot.png", get(ecosystem_snapshot))
        .with_state(app)
}

/// A server bound to a port and serving in the background.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub app: Arc<App>,
    pub task: JoinHandle<std::io::Result<()>>,
}

pub async fn spawn(config: ServerConfig) -> Result<RunningServer, ServiceError> {
    let listener = TcpListener::bind(config.bind).await?;
    let addr = listener.local_addr()?;
    let app = tokio::task::spawn_blocking(move || App::build(&config))
        .await
        .expect("app construction does not panic")?;
    let routes = router(app.clone());
    let task = tokio::spawn(async move { axum::serve(listener, routes).await });
    tracing::info!(%addr, "listening");
    Ok(RunningServer { addr, app, task })
}

/// Serves until the process is stopped.
pub async fn serve(config: ServerConfig) -> Result<(), ServiceError> {
    let server = spawn(config).await?;
    server.task.await.expect("server task does not panic")?;
    Ok(())
}

fn json_error(status: StatusCode, body: serde_json::Value) -> Response {
    (status, Json(body)).into_response()
}

async fn healthz(State(app): State<Arc<App>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "sessions": app.sessions.len(),
        "embedder": app.runs.embedder.name(),
    }))
}

async fn list_runs(State(app): State<Arc<App>>) -> Response {
    let store = app.runs.store.clone();
    match tokio::task::spawn_blocking(move || store.list()).await.expect("listing does not panic") {
        Ok(ids) => Json(json!({ "runs": ids })).into_response(),
        Err(e) => json_error(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": e.to_string() })),
    }
}

async fn get_run(State(app): State<Arc<App>>, Path(id): Path<String>) -> Response {
    let store = app.runs.store.clone();
    let loaded = tokio::task::spawn_blocking(move || store.load_run(&id))
        .await
        .expect("loading does not panic");
    match loaded {
        Ok(history) => Json(history).into_response(),
        Err(e @ (StoreError::NotFound(_) | StoreError::InvalidId(_))) => {
            json_error(StatusCode::NOT_FOUND, json!({ "error": "not_found", "message": e.to_string() }))
        }
        Err(StoreError::ParseError { line, message }) => json_error(
            StatusCode::INTERNAL_SERVER_ERROR,
            json!({ "error": "parse_error", "line": line, "message": message }),
        ),
        Err(e) => json_error(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": e.to_string() })),
    }
}

async fn ecosystem_state(State(app): State<Arc<App>>) -> Json<semswarm_core::ecosystem::EcosystemState> {
    Json(app.ecosystem.state())
}

#[derive(Deserialize)]
struct SnapshotQuery {
    size: Option<usize>,
}

async fn ecosystem_snapshot(State(app): State<Arc<App>>, Query(q): Query<SnapshotQuery>) -> Response {
    let size = q.size.unwrap_or(512).clamp(semswarm_core::render::MIN_IMAGE_SIZE, 2048);
    match app.ecosystem.snapshot_png(size).await {
        Some(png) if !png.is_empty() => ([(header::CONTENT_TYPE, "image/png")], Body::from(png)).into_response(),
        _ => json_error(StatusCode::SERVICE_UNAVAILABLE, json!({ "error": "ecosystem unavailable" })),
    }
}

async fn ws_upgrade(State(app): State<Arc<App>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| connection(socket, app))
}

/// One WebSocket client. Inbound frames, run events and the outbound queue
/// are all handled here; anything slow runs elsewhere and reports back
/// through a channel.
async fn connection(socket: WebSocket, app: Arc<App>) {
    let (mut sink, mut stream) = socket.split();
    let (out, mut out_rx) = mpsc::unbounded_channel::<ServerMessage>();
    let writer = tokio::spawn(async move {
        let mut seq = 0u64;
        while let Some(msg) = out_rx.recv().await {
            seq += 1;
            if sink.send(Message::Text(msg.encode(seq).into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    let (events_tx, mut events) = mpsc::unbounded_channel::<RunEvent>();
    let session_id = app.sessions.create();
    let _ = out.send(ServerMessage::Session {
        session_id: session_id.clone(),
    });
    let mut conn = Connection {
        app: app.clone(),
        session_id: session_id.clone(),
        machine: Session::new(),
        out,
        events_tx,
        runs: Vec::new(),
        active_run_id: None,
        last_run_id: None,
        last_seq: None,
    };
    loop {
        tokio::select! {
            frame = stream.next() => match frame {
                Some(Ok(Message::Text(text))) => conn.on_text(text.as_str()),
                Some(Ok(Message::Binary(_))) => conn.reply_error(
                    &ProtocolError::new(ErrorCode::BadJson, "binary frames are not supported"), None),
                Some(Ok(_)) => {}
                Some(Err(_)) | None => break,
            },
            Some(ev) = events.recv() => conn.on_run_event(ev),
        }
    }
    let runs = conn.close();
    drop(conn);
    // Runs stop at their next generation boundary; wait so the partial
    // history is complete on disk before the session disappears.
    let _ = tokio::task::spawn_blocking(move || runs.into_iter().for_each(RunHandle::join)).await;
    let _ = app.sessions.close(&session_id);
    let _ = writer.await;
}

struct Connection {
    app: Arc<App>,
    session_id: String,
    machine: Session,
    out: UnboundedSender<ServerMessage>,
    events_tx: UnboundedSender<RunEvent>,
    runs: Vec<RunHandle>,
    active_run_id: Option<String>,
    last_run_id: Option<String>,
    last_seq: Option<u64>,
}

impl Connection {
    fn send(&self, msg: ServerMessage) {
        let _ = self.out.send(msg);
    }

    fn reply_error(&self, err: &ProtocolError, in_reply_to: Option<u64>) {
        self.send(ServerMessage::error(err, in_reply_to));
    }

    fn sync_registry(&self) {
        let run = match self.machine.state() {
            SessionState::Running | SessionState::Paused => self.active_run_id.clone(),
            _ => None,
        };
        self.app.sessions.update(&self.session_id, self.machine.state(), run);
    }

    fn run(&self, token: u64) -> Option<&RunHandle> {
        self.runs.iter().find(|r| r.token == token)
    }

    fn on_text(&mut self, text: &str) {
        let (seq, msg) = match parse_client(text) {
            Ok(m) => m,
            Err(e) => return self.reply_error(&e, None),
        };
        if self.last_seq.is_some_and(|last| seq <= last) {
            let e = ProtocolError::new(ErrorCode::BadSeq, format!("seq {seq} is not above {}", self.last_seq.unwrap_or(0)));
            return self.reply_error(&e, Some(seq));
        }
        self.last_seq = Some(seq);

        // Settings are checked before the session sees the command, so a
        // rejected start leaves the session as it was.
        let mut fresh_config = None;
        if let ClientMessage::StartRun { config, .. } = &msg {
            if self.machine.state() == SessionState::Idle {
                match merge_config(&self.app.defaults, config.as_ref()) {
                    Ok(mut c) => {
                        if config.as_ref().and_then(|c| c.get("run_seed")).is_none() {
                            c.run_seed = rand::random();
                        }
                        fresh_config = Some(c);
                    }
                    Err(e) => return self.reply_error(&e, Some(seq)),
                }
            }
        }
        let kind = msg.kind();
        match self.machine.handle(&Event::Client(msg)) {
            Ok(actions) => {
                for a in actions {
                    self.execute(a, seq, kind, &mut fresh_config);
                }
            }
            Err(e) => self.reply_error(&e, Some(seq)),
        }
        self.sync_registry();
    }

    fn execute(&mut self, action: Action, seq: u64, kind: &str, fresh_config: &mut Option<EvolutionConfig>) {
        match action {
            Action::Pong => self.send(ServerMessage::Pong { in_reply_to: seq }),
            Action::Ack => self.send(ServerMessage::ack(kind, seq)),
            Action::StartRun { token, prompt, .. } => {
                let config = fresh_config.take().expect("validated before the session accepted it");
                self.active_run_id = None;
                let setup = Setup::Fresh { prompt, config };
                let handle = spawn_run(self.app.runs.clone(), token, setup, seq, self.events_tx.clone());
                self.runs.push(handle);
            }
            Action::Branch {
                token,
                run_id,
                generation,
                candidate,
            } => {
                let parent_run_id = run_id
                    .or_else(|| self.active_run_id.clone())
                    .or_else(|| self.last_run_id.clone())
                    .unwrap_or_default();
                self.active_run_id = None;
                let setup = Setup::Branch {
                    parent_run_id,
                    generation,
                    candidate,
                };
                let handle = spawn_run(self.app.runs.clone(), token, setup, seq, self.events_tx.clone());
                self.runs.push(handle);
            }
            Action::Pause(token) => {
                if let Some(r) = self.run(token) {
                    r.send(Control::Pause);
                }
                self.send(ServerMessage::ack(kind, seq));
            }
            Action::Resume(token) => {
                if let Some(r) = self.run(token) {
                    r.send(Control::Resume);
                }
                self.send(ServerMessage::ack(kind, seq));
            }
            Action::Refine(token, prompt) => match self.run(token) {
                Some(r) => r.send(Control::Refine { prompt, in_reply_to: seq }),
                None => self.reply_error(&ProtocolError::new(ErrorCode::NoRun, "run has ended"), Some(seq)),
            },
            Action::Stop(token) => {
                if let Some(r) = self.run(token) {
                    r.send(Control::Stop);
                }
            }
            Action::Admit { run_id, n_agents } => {
                let n = n_agents.unwrap_or(self.app.admit_agents);
                tokio::spawn(admit(self.app.clone(), self.out.clone(), self.session_id.clone(), run_id, n, seq));
            }
        }
    }

    fn on_run_event(&mut self, ev: RunEvent) {
        match ev {
            RunEvent::Started {
                token,
                run_id,
                of,
                in_reply_to,
            } => {
                if self.machine.active_run() == Some(token) {
                    self.active_run_id = Some(run_id.clone());
                }
                self.last_run_id = Some(run_id.clone());
                self.send(ServerMessage::Ack {
                    of: of.to_string(),
                    in_reply_to,
                    run_id: Some(run_id),
                    lifeform_id: None,
                });
            }
            RunEvent::Generation { update, .. } => self.send(ServerMessage::GenerationUpdate(*update)),
            RunEvent::Refined {
                in_reply_to, result, ..
            } => match result {
                Ok(()) => self.send(ServerMessage::ack("refine", in_reply_to)),
                Err(e) => self.reply_error(&e, Some(in_reply_to)),
            },
            RunEvent::Finished {
                token,
                run_id,
                status,
                generations,
                error,
                setup_reply,
            } => {
                let _ = self.machine.handle(&Event::RunFinished(token));
                if self.machine.active_run().is_none() {
                    self.active_run_id = None;
                }
                self.runs.retain(|r| r.token != token);
                match (setup_reply, run_id) {
                    (Some(seq), _) => {
                        let e = error.unwrap_or_else(|| ProtocolError::new(ErrorCode::Internal, "run did not start"));
                        self.reply_error(&e, Some(seq));
                    }
                    (None, Some(run_id)) => {
                        self.last_run_id = Some(run_id.clone());
                        self.send(ServerMessage::RunFinished {
                            run_id,
                            status,
                            generations,
                            error: error.map(|e| e.to_string()),
                        });
                    }
                    (None, None) => {}
                }
                self.sync_registry();
            }
        }
    }

    /// Stops any run and hands back the run threads so the caller can wait.
    fn close(&mut self) -> Vec<RunHandle> {
        if let Ok(actions) = self.machine.handle(&Event::Close) {
            for a in actions {
                if let Action::Stop(token) = a {
                    if let Some(r) = self.run(token) {
                        r.send(Control::Stop);
                    }
                }
            }
        }
        for r in &self.runs {
            r.send(Control::Stop);
        }
        std::mem::take(&mut self.runs)
    }
}

async fn admit(app: Arc<App>, out: UnboundedSender<ServerMessage>, owner: String, run_id: String, n: usize, seq: u64) {
    let runs = app.runs.clone();
    let prepared = tokio::task::spawn_blocking(move || {
        let history = runs.store.load_run(&run_id).map_err(|e| match e {
            StoreError::NotFound(_) | StoreError::InvalidId(_) => ProtocolError::new(ErrorCode::NotFound, e.to_string()),
            e => ProtocolError::new(ErrorCode::Internal, e.to_string()),
        })?;
        let best = history
            .records
            .iter()
            .min_by(|a, b| a.best_loss.total_cmp(&b.best_loss))
            .ok_or_else(|| ProtocolError::new(ErrorCode::NotFound, format!("run {run_id} has no generations yet")))?;
        let embedding = runs
            .embedder
            .embed_text(history.current_prompt())
            .map_err(|e| ProtocolError::new(ErrorCode::EmbedFailed, e.to_string()))?;
        Ok::<_, ProtocolError>((best.best_params, embedding))
    })
    .await
    .expect("admission preparation does not panic");
    let reply = match prepared {
        Ok((params, embedding)) => match app.ecosystem.admit(params, embedding, owner, n).await {
            Ok(id) => ServerMessage::Ack {
                of: "admit".into(),
                in_reply_to: seq,
                run_id: None,
                lifeform_id: Some(id),
            },
            Err(e) => {
                let code = match e {
                    AdmitError::Ecosystem(EcosystemError::CapacityExceeded { .. }) => ErrorCode::CapacityExceeded,
                    AdmitError::Ecosystem(EcosystemError::EmptyCohort) => ErrorCode::BadPayload,
                    _ => ErrorCode::Internal,
                };
                ServerMessage::error(&ProtocolError::new(code, e.to_string()), Some(seq))
            }
        },
        Err(e) => ServerMessage::error(&e, Some(seq)),
    };
    let _ = out.send(reply);
}
