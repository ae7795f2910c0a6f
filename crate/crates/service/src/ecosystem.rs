//! The shared ecosystem, stepped on a dedicated thread.
//!
//! Commands are queued and applied between steps. Readers get a snapshot
//! that is refreshed after every admission and every few steps.

use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use semswarm_core::ecosystem::{render_snapshot, EcosystemError, EcosystemState, EcosystemWorld};
use semswarm_core::render::encode_png;
use semswarm_core::semantic::Embedding;
use semswarm_core::swarm::SwarmParams;
use tokio::sync::oneshot;

/// Steps between snapshot refreshes.
const SNAPSHOT_EVERY: u64 = 10;

#[derive(Debug, Clone)]
pub struct EcosystemConfig {
    pub capacity: usize,
    pub seed: u64,
    /// Target steps per second. Zero freezes the world; admissions still work.
    pub steps_per_second: f64,
}

impl Default for EcosystemConfig {
    fn default() -> Self {
        EcosystemConfig {
            capacity: semswarm_core::ecosystem::DEFAULT_CAPACITY,
            seed: 0,
            steps_per_second: 30.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AdmitError {
    #[error(transparent)]
    Ecosystem(#[from] EcosystemError),
    #[error("the ecosystem is shut down")]
    Gone,
}

enum Command {
    Admit {
        params: SwarmParams,
        embedding: Embedding,
        owner: String,
        n_agents: usize,
        reply: oneshot::Sender<Result<String, AdmitError>>,
    },
    Snapshot {
        size: usize,
        reply: oneshot::Sender<Vec<u8>>,
    },
    Shutdown,
}

/// Cheap to clone; the world thread stops once every handle is dropped or
/// [`EcosystemHandle::shutdown`] is called.
#[derive(Clone)]
pub struct EcosystemHandle {
    commands: Sender<Command>,
    state: Arc<RwLock<EcosystemState>>,
}

impl EcosystemHandle {
    pub fn spawn(config: EcosystemConfig) -> Self {
        let world = EcosystemWorld::new(config.capacity, config.seed);
        let state = Arc::new(RwLock::new(EcosystemState::of(&world)));
        let (tx, rx) = mpsc::channel::<Command>();
        let shared = state.clone();
        thread::Builder::new()
            .name("ecosystem".into())
            .spawn(move || {
                let mut world = world;
                let period = (config.steps_per_second > 0.0).then(|| Duration::from_secs_f64(1.0 / config.steps_per_second));
                let mut next_step = Instant::now();
                let publish = |w: &EcosystemWorld| *shared.write().expect("state lock") = EcosystemState::of(w);
                loop {
                    let stepping = period.is_some() && !world.is_empty();
                    let wait = if stepping {
                        next_step.saturating_duration_since(Instant::now())
                    } else {
                        Duration::from_millis(200)
                    };
                    match rx.recv_timeout(wait) {
                        Ok(Command::Shutdown) | Err(RecvTimeoutError::Disconnected) => return,
                        Ok(Command::Admit {
                            params,
                            embedding,
                            owner,
                            n_agents,
                            reply,
                        }) => {
                            let r = world.admit_lifeform(&params, embedding, &owner, n_agents).map(|l| l.id).map_err(AdmitError::from);
                            publish(&world);
                            let _ = reply.send(r);
                            continue;
                        }
                        Ok(Command::Snapshot { size, reply }) => {
                            let png = render_snapshot(&world, size).map(|img| encode_png(&img)).unwrap_or_default();
                            let _ = reply.send(png);
                            continue;
                        }
                        Err(RecvTimeoutError::Timeout) => {}
                    }
                    if !stepping {
                        next_step = Instant::now();
                        continue;
                    }
                    if let Err(e) = world.step() {
                        tracing::error!(error = %e, "ecosystem step failed");
                    }
                    if world.step_count.is_multiple_of(SNAPSHOT_EVERY) {
                        publish(&world);
                    }
                    // Falling behind resets the schedule instead of bursting.
                    next_step = (next_step + period.expect("stepping")).max(Instant::now());
                }
            })
            .expect("spawning the ecosystem thread");
        EcosystemHandle { commands: tx, state }
    }

    pub fn state(&self) -> EcosystemState {
        self.state.read().expect("state lock").clone()
    }

    pub async fn admit(
        &self,
        params: SwarmParams,
        embedding: Embedding,
        owner: String,
        n_agents: usize,
    ) -> Result<String, AdmitError> {
        let (reply, rx) = oneshot::channel();
        let cmd = Command::Admit {
            params,
            embedding,
            owner,
            n_agents,
            reply,
        };
        self.commands.send(cmd).map_err(|_| AdmitError::Gone)?;
        rx.await.unwrap_or(Err(AdmitError::Gone))
    }

    /// PNG of the current world, or `None` if the world thread is gone.
    pub async fn snapshot_png(&self, size: usize) -> Option<Vec<u8>> {
        let (reply, rx) = oneshot::channel();
        self.commands.send(Command::Snapshot { size, reply }).ok()?;
        rx.await.ok()
    }

    pub fn shutdown(&self) {
        let _ = self.commands.send(Command::Shutdown);
    }
}
