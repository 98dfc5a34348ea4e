use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or mismatched input data (shapes, resolutions, empty sets).
    #[error("input error: {0}")]
    Input(String),

    /// An operation was called in a way its contract does not allow.
    #[error("usage error: {0}")]
    Usage(String),

    /// A decoder blueprint or model configuration is internally inconsistent.
    #[error("construction error: {0}")]
    Construction(String),

    #[error("config error at key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("file error at {}: {message}", path.display())]
    File { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::File {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
