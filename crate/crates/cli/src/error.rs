use std::path::Path;

use stagecast::data::DataError;
use stagecast::eval::EvalError;
use stagecast::models::ModelError;
use stagecast::train::TrainError;
use thiserror::Error;

/// Exit status for user and input errors.
pub const EXIT_USER: u8 = 2;
/// Exit status for internal invariant failures.
pub const EXIT_INTERNAL: u8 = 1;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Internal(String),
}

/// A failure tagged with the pipeline stage it came from.
#[derive(Debug, Error)]
#[error("{stage}: {failure}")]
pub struct CliError {
    pub stage: &'static str,
    pub failure: Failure,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            stage: "config",
            failure: Failure::Config(msg.into()),
        }
    }

    pub fn io(stage: &'static str, path: &Path, source: std::io::Error) -> Self {
        Self {
            stage,
            failure: Failure::Io {
                path: path.display().to_string(),
                source,
            },
        }
    }

    pub fn internal(stage: &'static str, msg: impl Into<String>) -> Self {
        Self {
            stage,
            failure: Failure::Internal(msg.into()),
        }
    }

    pub fn exit_code(&self) -> u8 {
        let model_code = |e: &ModelError| match e {
            ModelError::Nn(_) | ModelError::Frozen => EXIT_INTERNAL,
            _ => EXIT_USER,
        };
        match &self.failure {
            Failure::Config(_) | Failure::Io { .. } | Failure::Data(_) => EXIT_USER,
            Failure::Model(e) => model_code(e),
            Failure::Train(TrainError::Argument(_)) => EXIT_USER,
            Failure::Train(TrainError::Model(e)) => model_code(e),
            Failure::Train(_) => EXIT_INTERNAL,
            Failure::Eval(EvalError::Model(e)) => model_code(e),
            Failure::Eval(_) => EXIT_USER,
            Failure::Internal(_) => EXIT_INTERNAL,
        }
    }
}

/// Attaches a stage name to any pipeline error.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T, E: Into<Failure>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            stage,
            failure: e.into(),
        })
    }
}
