use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("non-finite value during {0}")]
    NonFinite(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("model fingerprint mismatch: index built with {index}, model is {model}")]
    FingerprintMismatch { index: String, model: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
