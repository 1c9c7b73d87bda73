use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition of the operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Matrix and vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Cholesky factorization failed.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A factorization succeeded but the system is too ill-conditioned to trust.
    #[error("numerical failure: {what} (condition estimate {condition:e})")]
    IllConditioned { what: String, condition: f64 },

    /// Any other numerical breakdown (non-positive innovation variance, blow-up, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Conjugate gradient hit its iteration cap.
    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
