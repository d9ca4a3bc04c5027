//! Crate-wide error type with categorized variants.
//!
//! Each variant maps to a stable process exit code so shell pipelines can
//! distinguish bad invocations from bad data from numeric blowups.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape or extent mismatch.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// API misuse (non-scalar loss, all positions masked, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or out-of-range data (token id >= vocab, empty text, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A corpus source could not be read or parsed.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// An infeasible sampling plan or empty corpus.
    #[error("plan error: {0}")]
    Plan(String),

    /// NaN/Inf produced during computation; the context names the op and location.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable exit code per category (0 is reserved for success).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 2,
            Error::Dimension(_) => 3,
            Error::Data(_) | Error::Ingestion(_) | Error::Plan(_) => 4,
            Error::Numeric(_) => 5,
            Error::Io(_) | Error::Json(_) => 6,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
