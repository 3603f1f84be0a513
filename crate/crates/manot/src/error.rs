//! Crate-wide error type.

use crate::geometry::ManifoldKind;

/// Errors produced by geometry, solvers, training, and file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("manifold mismatch: {0} vs {1}")]
    ManifoldMismatch(ManifoldKind, ManifoldKind),

    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("log map undefined at the cut locus (antipodal points on the sphere)")]
    CutLocus,

    #[error("degenerate projection: ambient vector has near-zero norm")]
    DegenerateProjection,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("training aborted at step {step}: {reason}")]
    TrainingAborted { step: usize, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
