use thiserror::Error;

use mucko::data::DataError;
use mucko::model::ModelError;
use mucko::retrieval::RetrievalError;
use mucko::train::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    /// Stable code printed in front of every diagnostic.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "E_USAGE",
            CliError::Config(_) => "E_CONFIG",
            CliError::Io { .. } => "E_IO",
            CliError::Data(e) => match e {
                DataError::Io { .. } | DataError::Empty(_) | DataError::MissingKnowledgeBase(_) => "E_IO",
                DataError::Json { .. } | DataError::Version { .. } => "E_FORMAT",
                DataError::Schema { .. } => "E_SCHEMA",
                DataError::Spec(_) => "E_CONFIG",
                DataError::Graph(_) => "E_SCHEMA",
                DataError::Retrieval(_) => "E_RETRIEVAL",
                DataError::Model(_) => "E_MODEL",
                DataError::Train(_) => "E_TRAIN",
            },
            CliError::Model(_) => "E_MODEL",
            CliError::Retrieval(_) => "E_RETRIEVAL",
            CliError::Train(_) => "E_TRAIN",
        }
    }

    /// `CODE: message` on a single line.
    pub fn diagnostic(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("{}: {}", self.code(), msg.trim())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}
