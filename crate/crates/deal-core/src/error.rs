//! Crate-wide error type.

use std::io;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed text input (edge lists), with a 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An id referred to a node outside the declared node count.
    #[error("node id {id} out of bounds for node count {node_count}")]
    NodeOutOfBounds { id: u64, node_count: u64 },

    /// A structural or numeric argument was rejected.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Tensor or block shapes that do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Binary file with a bad magic or inconsistent framing.
    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: String, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    /// A worker observed a message it cannot interpret.
    #[error("protocol error on machine {machine}: {msg}")]
    Protocol { machine: usize, msg: String },

    /// Simulated transport reached quiescence with receives still pending.
    #[error("deadlock: {0}")]
    Deadlock(String),

    /// A worker thread panicked; the run is aborted.
    #[error("worker {machine} panicked: {msg}")]
    WorkerPanic { machine: usize, msg: String },

    /// Another worker failed first and the run was torn down.
    #[error("run aborted: {0}")]
    Aborted(String),

    /// Numeric integrity check failed (NaN/Inf in results).
    #[error("integrity failure: {0}")]
    Integrity(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn corrupt(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Corrupt { path: path.into(), msg: msg.into() }
    }
}
