//! Live evolution sessions and the shared ecosystem, over WebSocket and HTTP.
//!
//! | route | method | purpose |
//! |-------|--------|---------|
//! | `/v1/ws` | GET (upgrade) | session protocol, see [`protocol`] |
//! | `/v1/runs` | GET | ids of stored runs |
//! | `/v1/runs/{id}` | GET | a stored run history |
//! | `/v1/ecosystem/state` | GET | lifeform registry and meta-rules |
//! | `/v1/ecosystem/snapshot.png` | GET | rendered ecosystem, `?size=` pixels |
//! | `/healthz` | GET | liveness |

pub mod ecosystem;
pub mod protocol;
pub mod model_check;
pub mod runner;
pub mod server;
pub mod session;
pub mod store;

pub use server::{serve, spawn, App, RunningServer, ServerConfig, ServiceError, SessionInfo, SessionRegistry, EMBED_ENDPOINT_ENV};
