use std::path::PathBuf;

use ratlab_grad::GradError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RatError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid example: {0}")]
    Example(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("mask has {got} units but the example has {expected}")]
    MaskLength { expected: usize, got: usize },
    #[error("granularity mismatch: model is {model}, data is {data}")]
    Granularity { model: String, data: String },
    #[error("labels must be binary for bias injection, found {0}")]
    NonBinaryLabel(usize),
    #[error("embeddings are colinear for symbols {0} and {1}; re-embed the alphabet")]
    Colinear(usize, usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl RatError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RatError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = RatError> = std::result::Result<T, E>;
