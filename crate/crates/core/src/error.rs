use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("duplicate identifier: {0}")]
    Duplicate(String),

    #[error("missing template slot `{0}`")]
    MissingSlot(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("endpoint request failed after {attempts} attempt(s) (last status: {}): {message}", status.map(|s| s.to_string()).unwrap_or_else(|| "none".into()))]
    Endpoint {
        attempts: u32,
        status: Option<u16>,
        message: String,
    },

    #[error("corrupt cache file {path}: {message}")]
    CacheCorrupt { path: PathBuf, message: String },

    #[error("missing artifact {path}; run `{command}` first")]
    MissingArtifact { path: PathBuf, command: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
