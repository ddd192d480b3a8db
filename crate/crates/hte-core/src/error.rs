//! Error types shared across the estimation pipeline.

use thiserror::Error;

/// Errors produced by data validation, model fitting, and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate a documented precondition (shapes, ranges, flags).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A design matrix is rank deficient.
    #[error("singular design: {0}")]
    SingularDesign(String),

    /// A covariance matrix required for inference is not invertible.
    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    /// An iterative solver stopped without meeting its tolerance.
    /// `last_iterate` carries the best parameter vector reached.
    #[error("no convergence in {context} after {iterations} iterations")]
    NonConvergence {
        context: String,
        iterations: usize,
        last_iterate: Vec<f64>,
    },

    /// A non-finite value appeared where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Too many bootstrap resamples failed to refit.
    #[error("bootstrap degenerate: {0}")]
    BootstrapDegenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
