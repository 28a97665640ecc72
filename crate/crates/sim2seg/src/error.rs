use std::io;
use std::path::{Path, PathBuf};

use sim2seg_core::CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("missing {stage} artifact: {path}")]
    MissingArtifact { stage: String, path: PathBuf },
    #[error("data error: {0}")]
    Data(String),
    #[error("training fault at step {step}: {reason}")]
    TrainingFault { step: u64, reason: String },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn missing(stage: impl Into<String>, path: impl AsRef<Path>) -> Self {
        Error::MissingArtifact {
            stage: stage.into(),
            path: path.as_ref().to_path_buf(),
        }
    }

    pub fn checkpoint(path: impl AsRef<Path>, reason: impl ToString) -> Self {
        Error::Checkpoint {
            path: path.as_ref().to_path_buf(),
            reason: reason.to_string(),
        }
    }

    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Core(CoreError::Config { .. }) => 2,
            Error::MissingArtifact { .. } => 3,
            Error::TrainingFault { .. } => 5,
            _ => 4,
        }
    }
}
