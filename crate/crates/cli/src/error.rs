use std::path::Path;

use emergence_core::data::DataError;
use emergence_core::emergence::EmergenceError;
use emergence_core::experiment::ExperimentError;
use emergence_core::init::InitError;

/// Exit 1 for anything the caller can fix, 2 for failures of the run itself.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
    #[error("training diverged in the {arm} arm, seed {seed}, epoch {epoch}")]
    Diverged {
        arm: &'static str,
        seed: u64,
        epoch: usize,
    },
    /// The command already printed its diagnostics.
    #[error("exit {0}")]
    Reported(u8),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Internal(_) | CliError::Diverged { .. } => 2,
            CliError::Reported(code) => *code,
        }
    }

    pub fn reading(path: &Path, e: DataError) -> Self {
        CliError::Invalid(format!("{}: {e}", path.display()))
    }

    pub fn writing(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Internal(format!("cannot write {}: {e}", path.display()))
    }
}

impl From<EmergenceError> for CliError {
    fn from(e: EmergenceError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<InitError> for CliError {
    fn from(e: InitError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Nn(e) => CliError::Internal(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}
