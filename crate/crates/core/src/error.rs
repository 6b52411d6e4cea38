use std::path::PathBuf;

use autodiff::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, AdnetError>;

#[derive(Debug, Error)]
pub enum AdnetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },

    #[error("checkpoint {}: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("unknown split `{0}`")]
    UnknownSplit(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0} has not been trained")]
    Untrained(&'static str),

    #[error("pool of {pool} sentences is smaller than k = {k}")]
    PoolTooSmall { pool: usize, k: usize },

    #[error("inconsistent register spec: {0}")]
    Spec(String),
}

impl AdnetError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AdnetError::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        AdnetError::Json { path: path.into(), source }
    }
}
