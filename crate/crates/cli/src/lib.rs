//! Experiment driver: configuration, subcommands and the invariant suite.

pub mod config;
pub mod run;
pub mod verify;

pub use config::{apply_overrides, ExperimentConfig, Overrides};
pub use run::{run_experiment, Command, Outcome, Status};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] hqo_core::Error),
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 3 when the requested parameters admit no certified result, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(hqo_core::Error::Infeasible(_) | hqo_core::Error::BracketNotFound(_)) => 3,
            _ => 1,
        }
    }
}
