// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Grad(#[from] gradcore::GradError),
    #[error("vocabulary has {size} tokens, limit is {limit}")]
    VocabOverflow { size: usize, limit: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("classifier must be frozen before it is used by the explainer")]
    NotFrozen,
    #[error("classifier reached accuracy {reached:.4} on held-out data, floor is {floor:.4}")]
    AccuracyFloor { reached: f64, floor: f64 },
    #[error("non-finite loss component `{0}`")]
    NonFiniteLoss(&'static str),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

impl CoreError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
