use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the training / evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite or negative {side} weight {value} at pair {pair}, entry {entry}")]
    InvalidWeight {
        side: &'static str,
        pair: usize,
        entry: usize,
        value: f64,
    },

    #[error("Gram matrix is not positive definite (pivot {pivot}); use lambda > 0")]
    Factorization { pivot: usize },

    #[error("ridge residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error("evaluation protocol violation: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training needs ~{needed_bytes} bytes of dense storage, cap is {cap_bytes}")]
    MemoryCap { needed_bytes: u64, cap_bytes: u64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
