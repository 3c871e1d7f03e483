use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("cannot read data: {0}")]
    Ingestion(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] precond_core::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    /// 0 success, 1 validation or ingestion, 2 numerical failure, 3 failed suite.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Ingestion(_) | CliError::Io(_) => 1,
            CliError::Core(precond_core::Error::Validation(_)) => 1,
            CliError::Core(_) => 2,
            CliError::Verification(_) => 3,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
