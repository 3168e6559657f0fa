use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("delay {tau:e} s outside the unambiguous range [0, {limit:e}) s")]
    AliasedDelay { tau: f64, limit: f64 },

    #[error("expected a {expected}-domain tensor, got {found}")]
    Domain { expected: &'static str, found: &'static str },

    #[error("dictionary check failed: {0}")]
    Dictionary(String),

    #[error("solver diverged at iteration {iteration}: objective {objective:e} exceeds {limit:e}")]
    Diverged { iteration: usize, objective: f64, limit: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
