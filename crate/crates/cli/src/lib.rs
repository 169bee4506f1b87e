//! Command implementations behind the `pdedisc` binary.

pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training failed: {0}")]
    Training(String),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Training(_) => 4,
        }
    }
}

impl From<pdedisc::Error> for CliError {
    fn from(e: pdedisc::Error) -> Self {
        use pdedisc::Error as E;
        match e {
            E::Config(_) => CliError::Config(e.to_string()),
            E::Diverged { .. } | E::NonFiniteGradient { .. } => CliError::Training(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
