//! Crate-wide error type.

use thiserror::Error;

/// Errors produced across the spectral, routing, training, and persistence layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A frequency or spatial index lies outside its matrix dimensions.
    #[error("index ({u}, {v}) out of range for dims ({rows}, {cols})")]
    IndexOutOfRange {
        u: usize,
        v: usize,
        rows: usize,
        cols: usize,
    },

    /// An argument violated an operation's precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A sampling budget exceeded the available frequency bins.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Matrix or vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An input carried NaN or infinite entries.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// Training aborted (e.g. a non-finite gradient).
    #[error("training error: {0}")]
    Training(String),

    /// Run configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Checkpoint payload does not match its CRC or is truncated.
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),

    /// Checkpoint was written by an incompatible format version.
    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
}

pub type Result<T> = std::result::Result<T, Error>;
