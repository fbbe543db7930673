use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("arity mismatch: expected {expected} parameters, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("singular Gram matrix for p = {p}, d = {d} (Weingarten table requires d >= p)")]
    SingularGram { p: usize, d: usize },

    #[error("unsupported moment order {0} (supported: 1..=4)")]
    UnsupportedOrder(usize),

    #[error("ill-conditioned matrix (condition number {condition_number:.3e}): {context}")]
    Conditioning {
        condition_number: f64,
        context: String,
    },

    #[error("training diverged at step {step}: loss {loss:.3e} exceeds guard {guard:.3e}")]
    Diverged { step: usize, loss: f64, guard: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("parse error in {path} at row {row}, column {col}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Conditioning { .. } | Error::SingularGram { .. } | Error::Diverged { .. } => 3,
            _ => 2,
        }
    }
}
