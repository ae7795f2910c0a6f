//! JSON-lines run logs.
//!
//! A log is UTF-8 text with one JSON object per line, each tagged by a
//! `type` field:
//!
//! | `type`            | fields |
//! |-------------------|--------|
//! | `header`          | `format`, `run_id`, `prompt`, `theta_prompt`, `config`, `rng_algorithm_id`, `embedder`, `parent` |
//! | `generation`      | every [`GenerationRecord`] field |
//! | `prompt_revision` | `generation`, `prompt`, `theta_prompt` |
//!
//! The header comes first and appears once. Revisions are written where
//! they happened, before the first generation scored against them.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BranchOrigin, EvolutionConfig, GenerationRecord, PromptRevision, RunHistory};
use crate::swarm::PARAM_DIM;

pub const RUN_LOG_FORMAT: &str = "semswarm-run/1";

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("run log is empty or does not start with a header")]
    MissingHeader,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogHeader {
    pub format: String,
    pub run_id: String,
    pub prompt: String,
    pub theta_prompt: [f64; PARAM_DIM],
    pub config: EvolutionConfig,
    pub rng_algorithm_id: String,
    pub embedder: String,
    pub parent: Option<BranchOrigin>,
}

impl RunLogHeader {
    pub fn of(history: &RunHistory) -> Self {
        RunLogHeader {
            format: RUN_LOG_FORMAT.to_string(),
            run_id: history.run_id.clone(),
            prompt: history.prompt.clone(),
            theta_prompt: history.theta_prompt,
            config: history.config.clone(),
            rng_algorithm_id: history.rng_algorithm_id.clone(),
            embedder: history.embedder.clone(),
            parent: history.parent.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunLogLine {
    Header(RunLogHeader),
    Generation(GenerationRecord),
    PromptRevision(PromptRevision),
}

/// Appends lines to a log as a run progresses. Each line is flushed as soon
/// as it is written.
pub struct RunLogWriter<W: Write> {
    out: W,
}

impl<W: Write> RunLogWriter<W> {
    /// Writes the header of `history` and returns the writer.
    pub fn start(out: W, history: &RunHistory) -> Result<Self, RunLogError> {
        let mut w = RunLogWriter { out };
        w.line(&RunLogLine::Header(RunLogHeader::of(history)))?;
        Ok(w)
    }

    pub fn record(&mut self, record: &GenerationRecord) -> Result<(), RunLogError> {
        self.line(&RunLogLine::Generation(record.clone()))
    }

    pub fn revision(&mut self, revision: &PromptRevision) -> Result<(), RunLogError> {
        self.line(&RunLogLine::PromptRevision(revision.clone()))
    }

    fn line(&mut self, line: &RunLogLine) -> Result<(), RunLogError> {
        serde_json::to_writer(&mut self.out, line).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Writes a complete history.
pub fn write_run_log<W: Write>(history: &RunHistory, out: W) -> Result<W, RunLogError> {
    let mut w = RunLogWriter::start(out, history)?;
    let mut revisions = history.prompt_revisions.iter().peekable();
    for record in &history.records {
        while let Some(rev) = revisions.next_if(|r| r.generation <= record.generation) {
            w.revision(rev)?;
        }
        w.record(record)?;
    }
    for rev in revisions {
        w.revision(rev)?;
    }
    Ok(w.into_inner())
}

/// Serializes a history to a log string.
pub fn run_log_string(history: &RunHistory) -> String {
    let bytes = write_run_log(history, Vec::new()).expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("serde_json emits UTF-8")
}

/// Reads a log back. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn read_run_log<R: BufRead>(input: R) -> Result<RunHistory, RunLogError> {
    let mut history: Option<RunHistory> = None;
    for (i, text) in input.lines().enumerate() {
        let text = text?;
        let line = i + 1;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: RunLogLine = serde_json::from_str(&text).map_err(|e| RunLogError::Parse {
            line,
            message: e.to_string(),
        })?;
        let bad = |message: &str| RunLogError::Parse {
            line,
            message: message.to_string(),
        };
        match (parsed, history.as_mut()) {
            (RunLogLine::Header(h), None) => {
                if h.format != RUN_LOG_FORMAT {
                    return Err(bad(&format!("unsupported format {:?}", h.format)));
                }
                history = Some(RunHistory {
                    run_id: h.run_id,
                    prompt: h.prompt,
                    prompt_revisions: Vec::new(),
                    theta_prompt: h.theta_prompt,
                    records: Vec::new(),
                    config: h.config,
                    rng_algorithm_id: h.rng_algorithm_id,
                    embedder: h.embedder,
                    parent: h.parent,
                });
            }
            (RunLogLine::Header(_), Some(_)) => return Err(bad("second header")),
            (_, None) => return Err(RunLogError::MissingHeader),
            (RunLogLine::Generation(r), Some(h)) => {
                if h.records.last().is_some_and(|prev| prev.generation >= r.generation) {
                    return Err(bad("generations out of order"));
                }
                h.records.push(r);
            }
            (RunLogLine::PromptRevision(r), Some(h)) => h.prompt_revisions.push(r),
        }
    }
    history.ok_or(RunLogError::MissingHeader)
}
