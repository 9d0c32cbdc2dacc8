use thiserror::Error;

/// Errors produced by the optimizer and the benchmark harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration does not belong to the space it was used with.
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    /// An argument violates a precondition (non-finite value, bad count, unknown name).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A linear-algebra step failed beyond repair (Cholesky at maximum jitter).
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The ask/tell protocol was violated (unknown or duplicate configuration).
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    /// An operation was requested before the data it needs exists.
    #[error("not ready: {0}")]
    NotReady(String),

    /// A run file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
