//! Per-connection session state, kept free of I/O so every transition can be
//! checked exhaustively.
//!
//! A session owns at most one run. Commands that would violate that, or that
//! make no sense in the current state, are rejected and leave the session
//! untouched. The runtime turns accepted commands into [`Action`]s.

use serde::{Deserialize, Serialize};

use crate::protocol::{ClientMessage, ErrorCode, ProtocolError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    Running,
    Paused,
    Closed,
}

/// Monotone label of a run within one session, so that a late "finished"
/// notice from an old run cannot end a newer one.
pub type RunToken = u64;

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Client(ClientMessage),
    /// The run with this token has ended on its own (completed or failed).
    RunFinished(RunToken),
    Close,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    StartRun {
        token: RunToken,
        prompt: String,
        config: Option<serde_json::Value>,
    },
    /// Start a branch. When a run is active this comes right after a
    /// [`Action::Stop`] for it, so the branch replaces it.
    Branch {
        token: RunToken,
        run_id: Option<String>,
        generation: u64,
        candidate: usize,
    },
    Pause(RunToken),
    Resume(RunToken),
    Refine(RunToken, String),
    /// Stop the run at its next generation boundary.
    Stop(RunToken),
    Admit {
        run_id: String,
        n_agents: Option<usize>,
    },
    Pong,
    /// Reply with a plain acknowledgement.
    Ack,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    state: SessionState,
    /// Token of the run that is running or paused.
    active: Option<RunToken>,
    next_token: RunToken,
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

fn reject(code: ErrorCode, message: &str) -> ProtocolError {
    ProtocolError::new(code, message)
}

impl Session {
    pub fn new() -> Self {
        Session {
            state: SessionState::Idle,
            active: None,
            next_token: 1,
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn active_run(&self) -> Option<RunToken> {
        self.active
    }

    fn begin(&mut self) -> RunToken {
        let t = self.next_token;
        self.next_token += 1;
        self.active = Some(t);
        self.state = SessionState::Running;
        t
    }

    /// Applies one event. On error nothing changes.
    pub fn handle(&mut self, event: &Event) -> Result<Vec<Action>, ProtocolError> {
        use SessionState::*;
        if self.state == Closed {
            return match event {
                Event::RunFinished(_) | Event::Close => Ok(Vec::new()),
                Event::Client(_) => Err(reject(ErrorCode::Closed, "session is closed")),
            };
        }
        let msg = match event {
            Event::Close => {
                let actions = self.active.map(Action::Stop).into_iter().collect();
                self.active = None;
                self.state = Closed;
                return Ok(actions);
            }
            Event::RunFinished(token) => {
                if self.active == Some(*token) {
                    self.active = None;
                    self.state = Idle;
                }
                return Ok(Vec::new());
            }
            Event::Client(m) => m,
        };
        match (msg, self.state) {
            (ClientMessage::Ping, _) => Ok(vec![Action::Pong]),
            (ClientMessage::Admit { run_id, n_agents }, _) => Ok(vec![Action::Admit {
                run_id: run_id.clone(),
                n_agents: *n_agents,
            }]),
            (ClientMessage::StartRun { prompt, config }, Idle) => {
                if prompt.trim().is_empty() {
                    return Err(reject(ErrorCode::EmptyPrompt, "prompt is empty"));
                }
                let token = self.begin();
                Ok(vec![Action::StartRun {
                    token,
                    prompt: prompt.clone(),
                    config: config.clone(),
                }])
            }
            (ClientMessage::StartRun { .. }, _) => Err(reject(ErrorCode::RunActive, "a run is already active")),
            (ClientMessage::Pause, Running) => {
                self.state = Paused;
                Ok(vec![Action::Pause(self.active.expect("running implies a run"))])
            }
            (ClientMessage::Pause, Paused) => Err(reject(ErrorCode::NotRunning, "run is already paused")),
            (ClientMessage::Pause, _) => Err(reject(ErrorCode::NoRun, "no active run")),
            (ClientMessage::Resume, Paused) => {
                self.state = Running;
                Ok(vec![Action::Resume(self.active.expect("paused implies a run"))])
            }
            (ClientMessage::Resume, Running) => Err(reject(ErrorCode::NotPaused, "run is not paused")),
            (ClientMessage::Resume, _) => Err(reject(ErrorCode::NoRun, "no active run")),
            (ClientMessage::Refine { prompt }, Paused) => {
                if prompt.trim().is_empty() {
                    return Err(reject(ErrorCode::EmptyPrompt, "prompt is empty"));
                }
                Ok(vec![Action::Refine(self.active.expect("paused implies a run"), prompt.clone())])
            }
            (ClientMessage::Refine { .. }, Running) => {
                Err(reject(ErrorCode::NotPaused, "refine needs a paused run"))
            }
            (ClientMessage::Refine { .. }, _) => Err(reject(ErrorCode::NoRun, "no active run")),
            (
                ClientMessage::Branch {
                    run_id,
                    generation,
                    candidate,
                },
                Idle | Running | Paused,
            ) => {
                let mut actions: Vec<Action> = self.active.map(Action::Stop).into_iter().collect();
                let token = self.begin();
                actions.push(Action::Branch {
                    token,
                    run_id: run_id.clone(),
                    generation: *generation,
                    candidate: *candidate,
                });
                Ok(actions)
            }
            (_, Closed) => unreachable!("handled above"),
        }
    }
}
