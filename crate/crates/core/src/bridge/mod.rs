//! Execution bridge: owns sandbox workers and the stdio wire protocol.

pub mod protocol;
pub mod worker;

use thiserror::Error;

pub use protocol::{ExecStatus, ExecuteRequest, ExecutionResult, Frame, ParamValue, Split};
pub use worker::{launcher_for, spawn_worker, WorkerHandle, WorkerLauncher, BUILTIN_STUB};

/// Default wall-clock limit per candidate execution, in seconds.
pub const DEFAULT_TIMEOUT_S: f64 = 120.0;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("failed to start worker `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("worker did not complete the handshake in time")]
    HandshakeTimeout,
    #[error("worker does not support task `{task}` (advertised: {advertised:?})")]
    TaskUnsupported { task: String, advertised: Vec<String> },
    #[error("worker protocol violation: {0}")]
    Protocol(String),
    #[error("worker died")]
    WorkerDead,
    #[error("unknown or missing parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}
