//! Command implementations behind the `ballwise` binary.

pub mod commands;
pub mod config;
pub mod io;

use std::fmt;

/// Failure of a CLI run; [`CliError::exit_code`] maps it to the process
/// exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Output(String),
    #[error("computation failed: {0}")]
    Compute(#[from] ballwise::Error),
}

impl CliError {
    pub fn input(e: impl fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }

    /// 1 for failures during computation, 2 for bad configuration or input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Compute(_) => 1,
            CliError::Usage(_) | CliError::Input(_) | CliError::Output(_) => 2,
        }
    }
}
