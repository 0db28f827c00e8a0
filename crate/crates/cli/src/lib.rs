//! Configuration, record formats and subcommand bodies behind the
//! `gradgrasp` binary.

pub mod commands;
pub mod config;
pub mod records;

use thiserror::Error;

/// Errors that map onto the process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("{0}")]
    NoValid(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::NoValid(_) => 4,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
