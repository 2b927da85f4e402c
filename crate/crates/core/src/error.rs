use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("block dimension {dim} exceeds the configured maximum {max}")]
    DimensionOverflow { dim: usize, max: usize },

    #[error("eigensolver did not converge for block {block}")]
    EigenNonConvergence { block: String },

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("coherent-state pole at jz = {jz}")]
    Pole { jz: f64 },

    #[error("invalid phase-space point: {0}")]
    InvalidPoint(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("energy surface eps0 = {0} is empty")]
    EmptySurface(f64),

    #[error("unconverged: {0}")]
    Unconverged(String),

    #[error("cache file {path} is corrupt: {reason}")]
    CacheCorrupt { path: PathBuf, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
