use std::path::Path;

use affine_adam::{ConfigError, EstimatorError, HarnessError, LemmaError, OptimError, ScheduleError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("violation: {0}")]
    Violation(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Violation(_) => 1,
            CliError::Usage(_) | CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Divergence(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::TooManyDiverged { .. } => CliError::Divergence(e.to_string()),
            HarnessError::Optim(OptimError::InvariantViolation { .. }) => CliError::Violation(e.to_string()),
            HarnessError::Optim(_) | HarnessError::Oracle(_) | HarnessError::Schedule(_) | HarnessError::InvalidStudy(_) => {
                CliError::Config(ConfigError::Invalid(e.to_string()))
            }
            HarnessError::Lemma(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        CliError::Config(ConfigError::Invalid(e.to_string()))
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<LemmaError> for CliError {
    fn from(e: LemmaError) -> Self {
        CliError::Runtime(e.to_string())
    }
}
