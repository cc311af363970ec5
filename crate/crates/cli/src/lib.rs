//! Command implementations behind the `fluidhopf` binary.

pub mod commands;
pub mod config;
pub mod output;

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("suite error: {0}")]
    Suite(String),
    #[error("verification failed")]
    VerifyFailed,
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn csv(path: &Path, e: csv::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn solver(e: impl std::fmt::Display) -> Self {
        CliError::Solver(e.to_string())
    }

    /// 1 for configuration and I/O problems, 2 for solver failures, 3 for
    /// failed verification.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Suite(_) | CliError::VerifyFailed => 3,
        }
    }
}
