// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("hook coordinate out of range: neuron {neuron} on a layer of width {width}")]
    HookOutOfRange { neuron: usize, width: usize },
    #[error("invalid intervention spec: {0}")]
    InvalidSpec(String),
    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("invalid probability vector: {0}")]
    InvalidProb(String),
    #[error("parameter set mismatch: {0}")]
    ParamMismatch(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` is not `Clone`/`PartialEq`; keep its message only.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("io: {0}")]
pub struct IoError(pub String);

impl From<std::io::Error> for GradError {
    fn from(e: std::io::Error) -> Self {
        GradError::Io(IoError(e.to_string()))
    }
}

pub type Result<T> = std::result::Result<T, GradError>;
