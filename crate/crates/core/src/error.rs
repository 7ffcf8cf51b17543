use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate data for k>1")]
    DegenerateData,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{stage} failed on {image}: {source}")]
    Stage {
        stage: &'static str,
        image: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("io error on {path}: {source}")]
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

    pub fn stage(stage: &'static str, image: impl Into<String>, source: Error) -> Self {
        Error::Stage {
            stage,
            image: image.into(),
            source: Box::new(source),
        }
    }

    /// Process exit code used by the `vv` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numerical(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
