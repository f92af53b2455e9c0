use thiserror::Error;

use crate::estimators::EstimateReport;
use crate::optim::OptimStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("rank-deficient Gram matrix (condition number {condition:.3e} exceeds cap {cap:.1e})")]
    RankDeficient { condition: f64, cap: f64 },

    #[error("solver did not converge ({status:?}) after {} iterations, grad norm {:.3e}", .best.iterations, .best.grad_norm_at_solution)]
    NonConvergence {
        status: OptimStatus,
        best: Box<EstimateReport>,
    },

    #[error("iterative reweighting diverged: weight magnitude {weight:.3e} at iteration {iteration}")]
    Divergence { weight: f64, iteration: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
