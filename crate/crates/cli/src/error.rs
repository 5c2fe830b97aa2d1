use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config files or parameter grids.
    #[error("{0}")]
    Validation(String),

    /// Anything that fails once the inputs were accepted.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
        }
    }
}

/// Config-shaped harness errors are the caller's fault; the rest are not.
impl From<flame_harness::HarnessError> for CliError {
    fn from(e: flame_harness::HarnessError) -> Self {
        use flame_harness::HarnessError as H;
        match e {
            H::Config(_) | H::Protocol(flame_core::Error::InvalidInput(_)) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
