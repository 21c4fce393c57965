use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the trigger-matching pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("sentence {sentence}: {message}")]
    Validation { sentence: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("non-finite loss encountered: {0}")]
    NonFinite(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
