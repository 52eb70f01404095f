//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands have incompatible shapes. Both shapes are named so the
    /// message is actionable without a debugger.
    #[error("dimension mismatch in {context}: {lhs} vs {rhs}")]
    DimensionMismatch {
        context: String,
        lhs: String,
        rhs: String,
    },

    #[error("{context}: expected length {expected}, got {got}")]
    LengthMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("site {site}: {rows} rows is not enough data (need at least {min})")]
    InsufficientData {
        site: String,
        rows: usize,
        min: usize,
    },

    #[error("domain label {label} out of range for {n_sites} sites")]
    LabelOutOfRange { label: usize, n_sites: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Training produced a non-finite loss. Coordinates pin down where.
    #[error("divergence at site {site}, round {round}, epoch {epoch}, phase {phase}: loss = {value}")]
    Divergence {
        site: String,
        round: u64,
        epoch: usize,
        phase: usize,
        value: f64,
    },

    #[error("gradient oracle error: {0}")]
    Oracle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            line,
            message: err.to_string(),
        }
    }
}

impl Error {
    pub(crate) fn dim(context: &str, lhs: impl std::fmt::Display, rhs: impl std::fmt::Display) -> Self {
        Error::DimensionMismatch {
            context: context.to_string(),
            lhs: lhs.to_string(),
            rhs: rhs.to_string(),
        }
    }
}
