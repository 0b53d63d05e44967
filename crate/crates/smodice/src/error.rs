//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by construction, parsing, and solving.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("support mismatch at index {index}: p({index}) = {p} but q({index}) = 0")]
    SupportMismatch { index: usize, p: f64 },

    #[error("linear solve failed: flow residual {residual:.3e} exceeds {limit:.3e}")]
    SingularSystem { residual: f64, limit: f64 },

    #[error("solver diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("dataset parse error at line {line}: {reason}")]
    DatasetLine { line: usize, reason: String },

    #[error("invalid grid spec: {0}")]
    GridSpec(String),

    #[error("instance too large: {count:.3e} deterministic policies exceeds limit {limit:.3e}")]
    InstanceTooLarge { count: f64, limit: f64 },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
