//! Exhaustive exploration of the session state machine.
//!
//! Every sequence of [`Input`]s up to a given length is replayed against a
//! fresh [`Session`], while a shadow model tracks which runs the runtime
//! would consider live. Any violated rule is reported with the sequence
//! that reached it.

use std::collections::BTreeSet;

use crate::protocol::{ClientMessage, ErrorCode};
use crate::session::{Action, Event, RunToken, Session, SessionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Input {
    Start,
    StartEmpty,
    Pause,
    Resume,
    Refine,
    RefineEmpty,
    Branch,
    Admit,
    Ping,
    /// The current run ends on its own.
    FinishCurrent,
    /// A run that is no longer current reports that it ended.
    FinishStale,
    Close,
}

pub const INPUTS: [Input; 12] = [
    Input::Start,
    Input::StartEmpty,
    Input::Pause,
    Input::Resume,
    Input::Refine,
    Input::RefineEmpty,
    Input::Branch,
    Input::Admit,
    Input::Ping,
    Input::FinishCurrent,
    Input::FinishStale,
    Input::Close,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExploreStats {
    /// Sequences checked, counting every prefix.
    pub sequences: u64,
    pub rejected: u64,
    /// Refines sent while a run was running.
    pub refines_while_running: u64,
}

fn event(input: Input, session: &Session) -> Event {
    let c = Event::Client;
    match input {
        Input::Start => c(ClientMessage::StartRun {
            prompt: "cluster".into(),
            config: None,
        }),
        Input::StartEmpty => c(ClientMessage::StartRun {
            prompt: "  ".into(),
            config: None,
        }),
        Input::Pause => c(ClientMessage::Pause),
        Input::Resume => c(ClientMessage::Resume),
        Input::Refine => c(ClientMessage::Refine { prompt: "swirl".into() }),
        Input::RefineEmpty => c(ClientMessage::Refine { prompt: String::new() }),
        Input::Branch => c(ClientMessage::Branch {
            run_id: None,
            generation: 0,
            candidate: 1,
        }),
        Input::Admit => c(ClientMessage::Admit {
            run_id: "r".into(),
            n_agents: None,
        }),
        Input::Ping => c(ClientMessage::Ping),
        Input::FinishCurrent => Event::RunFinished(session.active_run().unwrap_or(0)),
        Input::FinishStale => Event::RunFinished(session.active_run().map_or(0, |t| t.saturating_sub(1))),
        Input::Close => Event::Close,
    }
}

#[derive(Debug, Clone, Default)]
struct Model {
    live: BTreeSet<RunToken>,
    closed: bool,
}

fn step(session: &Session, model: &Model, input: Input, stats: &mut ExploreStats) -> Result<(Session, Model), String> {
    let before = session.clone();
    let ev = event(input, session);
    let mut s = session.clone();
    let mut m = model.clone();
    let result = s.handle(&ev);
    let running = before.state() == SessionState::Running;
    if running && matches!(input, Input::Refine | Input::RefineEmpty) {
        stats.refines_while_running += 1;
    }

    match &result {
        Err(e) => {
            stats.rejected += 1;
            if s != before {
                return Err(format!("rejected {ev:?} changed the session"));
            }
            if running && input == Input::Refine && e.code != ErrorCode::NotPaused {
                return Err(format!("refine while running gave {:?}", e.code));
            }
        }
        Ok(actions) => {
            if running && matches!(input, Input::Refine | Input::RefineEmpty) {
                return Err("refine accepted while running".into());
            }
            for a in actions {
                match a {
                    Action::StartRun { token, .. } | Action::Branch { token, .. } => {
                        if m.closed {
                            return Err("run started after close".into());
                        }
                        if !m.live.insert(*token) {
                            return Err(format!("token {token} reused"));
                        }
                    }
                    Action::Stop(t) => {
                        if !m.live.remove(t) {
                            return Err(format!("stopping run {t} that is not live"));
                        }
                    }
                    Action::Pause(t) | Action::Resume(t) | Action::Refine(t, _) => {
                        if !m.live.contains(t) {
                            return Err(format!("control for run {t} that is not live"));
                        }
                    }
                    Action::Admit { .. } | Action::Pong | Action::Ack => {}
                }
                if m.live.len() > 1 {
                    return Err(format!("two concurrent runs: {:?}", m.live));
                }
            }
            if let Event::RunFinished(t) = ev {
                m.live.remove(&t);
            }
            if ev == Event::Close {
                m.closed = true;
            }
        }
    }

    let has_run = matches!(s.state(), SessionState::Running | SessionState::Paused);
    if has_run != s.active_run().is_some() {
        return Err(format!("state {:?} with run {:?}", s.state(), s.active_run()));
    }
    if m.live.iter().next().copied() != s.active_run() || m.live.len() > 1 {
        return Err(format!("live runs {:?} but session reports {:?}", m.live, s.active_run()));
    }
    if before.state() == SessionState::Closed && s.state() != SessionState::Closed {
        return Err("closed is not absorbing".into());
    }
    match (input, before.state(), &result) {
        (Input::Pause, SessionState::Running, r) if r.is_err() || s.state() != SessionState::Paused => {
            return Err("pause while running did not pause".into())
        }
        (Input::Resume, SessionState::Paused, r) if r.is_err() || s.state() != SessionState::Running => {
            return Err("resume while paused did not resume".into())
        }
        (Input::Start, SessionState::Running | SessionState::Paused, r)
            if r.as_ref().err().map(|e| e.code) != Some(ErrorCode::RunActive) =>
        {
            return Err("second start was not refused".into())
        }
        (Input::Branch, SessionState::Running | SessionState::Paused, Ok(actions))
            if actions.first() != before.active_run().map(Action::Stop).as_ref() =>
        {
            return Err("branch did not stop the old run first".into())
        }
        _ => {}
    }
    stats.sequences += 1;
    Ok((s, m))
}

fn explore_from(
    session: &Session,
    model: &Model,
    path: &mut Vec<Input>,
    depth: usize,
    stats: &mut ExploreStats,
) -> Result<(), String> {
    for input in INPUTS {
        path.push(input);
        let (s, m) = step(session, model, input, stats).map_err(|e| format!("{e} after {path:?}"))?;
        if depth > 1 {
            explore_from(&s, &m, path, depth - 1, stats)?;
        }
        path.pop();
    }
    Ok(())
}

/// Checks every input sequence of length 1 to `max_len`.
pub fn explore(max_len: usize) -> Result<ExploreStats, String> {
    let mut stats = ExploreStats::default();
    if max_len > 0 {
        explore_from(&Session::new(), &Model::default(), &mut Vec::new(), max_len, &mut stats)?;
    }
    Ok(stats)
}
