use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed input, bad flags, invalid target specs.
    #[error("{0}")]
    Input(String),
    /// The numerical machinery failed on valid input.
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Input(_) => ExitCode::from(2),
            CliError::Numeric(_) => ExitCode::from(3),
            CliError::Output(_) => ExitCode::from(1),
        }
    }
}

impl From<cmpdak::Error> for CliError {
    fn from(e: cmpdak::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}
