//! Command-line front end: configuration, checkpoints, synthetic data and commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod synthetic;

pub use checkpoint::Checkpoint;
pub use commands::{execute, run, Cli, Command};
pub use config::RunConfig;

/// Failure classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Checkpoint(_) => 4,
        }
    }
}

impl From<textrec_core::Error> for CliError {
    fn from(e: textrec_core::Error) -> Self {
        use textrec_core::Error as E;
        match e {
            E::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
