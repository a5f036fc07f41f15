use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("Jacobi iteration did not converge within {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("matrix is not positive definite after shift (min eigenvalue {min_eigenvalue:e}, shift {epsilon:e})")]
    NotPositiveDefinite { min_eigenvalue: f64, epsilon: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("trial has {frames} frame(s); at least 2 are required")]
    DegenerateTrial { frames: usize },

    #[error("probe count {probes} exceeds data dimension {dim}")]
    ProbeCountExceedsDim { probes: usize, dim: usize },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("degree-law base p = {0} must be > 1")]
    InvalidBase(f64),

    #[error("trial has {frames} frame(s); acceleration needs at least 3")]
    TooShort { frames: usize },

    #[error("trial {trial_id} has fewer than 2 valid frames")]
    UnusableTrial { trial_id: String },

    #[error("invalid feature configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty fold: {0}")]
    EmptyFold(String),

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("schema error at {path}: {reason}")]
    SchemaError { path: String, reason: String },

    #[error("subject {0:?} is not covered by the split rule")]
    UnknownSubject(String),

    #[error("bad container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
