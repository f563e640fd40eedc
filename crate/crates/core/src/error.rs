use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the pipeline crates.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty dictionary: {0}")]
    EmptyDictionary(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("missing upstream artifact for stage `{stage}`: {path} (produced by `{producer}`)")]
    Dependency {
        stage: String,
        producer: String,
        path: PathBuf,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
