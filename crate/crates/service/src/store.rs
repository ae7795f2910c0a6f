//! Run histories on disk, one `{run_id}.jsonl` file per run.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, ErrorKind};
use std::path::{Path, PathBuf};

use semswarm_core::evolution::runlog::{read_run_log, write_run_log, RunLogError, RunLogWriter};
use semswarm_core::evolution::RunHistory;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no run {0}")]
    NotFound(String),
    #[error("run log line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("invalid run id {0:?}")]
    InvalidId(String),
    #[error("run {0} already exists")]
    AlreadyExists(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<RunLogError> for StoreError {
    fn from(e: RunLogError) -> Self {
        match e {
            RunLogError::Io(e) => StoreError::Io(e),
            RunLogError::Parse { line, message } => StoreError::ParseError { line, message },
            RunLogError::MissingHeader => StoreError::ParseError {
                line: 1,
                message: "missing header".into(),
            },
        }
    }
}

/// Live log of a run being written generation by generation.
pub type LiveLog = RunLogWriter<BufWriter<File>>;

#[derive(Debug, Clone)]
pub struct RunStore {
    dir: PathBuf,
}

/// Ids become file names, so only a conservative alphabet is accepted.
pub fn valid_run_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 96 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl RunStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(RunStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, run_id: &str) -> Result<PathBuf, StoreError> {
        if !valid_run_id(run_id) {
            return Err(StoreError::InvalidId(run_id.to_string()));
        }
        Ok(self.dir.join(format!("{run_id}.jsonl")))
    }

    pub fn contains(&self, run_id: &str) -> bool {
        self.path_of(run_id).is_ok_and(|p| p.exists())
    }

    /// Writes a whole history, replacing any earlier log of the same run.
    pub fn persist_run(&self, history: &RunHistory) -> Result<(), StoreError> {
        let path = self.path_of(&history.run_id)?;
        let tmp = path.with_extension("jsonl.tmp");
        let out = BufWriter::new(File::create(&tmp)?);
        write_run_log(history, out)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn load_run(&self, run_id: &str) -> Result<RunHistory, StoreError> {
        let path = self.path_of(run_id)?;
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(StoreError::NotFound(run_id.to_string())),
            Err(e) => return Err(e.into()),
        };
        Ok(read_run_log(BufReader::new(file))?)
    }

    /// Starts a fresh log for a run that has not been stored before.
    pub fn create_live(&self, history: &RunHistory) -> Result<LiveLog, StoreError> {
        let path = self.path_of(&history.run_id)?;
        let file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                return Err(StoreError::AlreadyExists(history.run_id.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        Ok(RunLogWriter::start(BufWriter::new(file), history)?)
    }

    /// `base` if unused, otherwise the first free `base-2`, `base-3`, ...
    pub fn unused_id(&self, base: &str) -> String {
        if !self.contains(base) {
            return base.to_string();
        }
        (2u64..)
            .map(|k| format!("{base}-{k}"))
            .find(|id| !self.contains(id))
            .expect("unbounded search")
    }

    /// Ids of every stored run, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".jsonl")) {
                if valid_run_id(id) {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}
