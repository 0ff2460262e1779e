use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the learning pipeline.
#[derive(Debug, Error)]
pub enum SocilError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got} (index {index})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
        index: usize,
    },

    #[error("non-finite value in {what} at t={t}, component {index}")]
    NonFinite {
        what: &'static str,
        t: usize,
        index: usize,
    },

    #[error("rollout diverged at step {step}")]
    Rollout { step: usize },

    #[error("outside validity box: {0}")]
    Validity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular {what} at t={t}")]
    Singular { what: &'static str, t: usize },

    #[error("non-finite {block} block while assembling derivatives at t={t}")]
    Assembly { block: &'static str, t: usize },

    #[error("finite-difference oracle failed: {0}")]
    Oracle(String),

    #[error("demonstration infeasible: {0}")]
    Infeasible(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SocilError>;
