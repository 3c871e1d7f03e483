use thiserror::Error;

/// Failures raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Inputs violate a documented precondition (shapes, ranges, indices).
    #[error("validation error: {0}")]
    Validation(String),

    /// A matrix that must be positive definite is singular or nearly so.
    #[error("singular matrix: lambda_min = {lambda_min:e}, lambda_max = {lambda_max:e}")]
    Singular { lambda_min: f64, lambda_max: f64 },

    /// An iteration failed to converge or produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A training run exceeded the divergence guard.
    #[error("run diverged at step {step}: loss = {loss:e}")]
    Diverged { step: usize, loss: f64 },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
