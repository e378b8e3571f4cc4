use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("order {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("mask entry {value} at index {index} is not +1 or -1")]
    InvalidMaskEntry { index: usize, value: i8 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("infeasible cell count: {0}")]
    InfeasibleCellCount(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("failed to read image {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("invalid scene script: {0}")]
    Scene(String),

    #[error("fusion: {0}")]
    Fusion(String),

    #[error("malformed message: {0}")]
    Protocol(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
