use std::fmt::Display;

use thiserror::Error;

/// Failures mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

pub fn usage(msg: impl Display) -> CliError {
    CliError::Usage(msg.to_string())
}

pub fn data(msg: impl Display) -> CliError {
    CliError::Data(msg.to_string())
}

pub fn backend(msg: impl Display) -> CliError {
    CliError::Backend(msg.to_string())
}

pub type CliResult<T = ()> = Result<T, CliError>;
