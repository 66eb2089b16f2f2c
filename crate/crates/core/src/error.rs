use thiserror::Error;

#[derive(Debug, Error)]
pub enum QrdError {
    #[error("label collision: {0}")]
    LabelCollision(String),

    #[error("unknown label: {0}")]
    UnknownLabel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("projection did not converge after {rounds} rounds (residual {residual:e})")]
    ProjectionNonConvergence { rounds: usize, residual: f64 },

    #[error("algebra decomposition failed: {0} (residual {1:e})")]
    Decomposition(String, f64),

    #[error("size cap exceeded: {0}")]
    CapExceeded(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, QrdError>;
