use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("clip `{clip_id}`, channel `{channel}`: expected {expected} dims, found {found}")]
    Dimension {
        clip_id: String,
        channel: String,
        expected: usize,
        found: usize,
    },

    #[error("{kind} references unknown clip `{clip_id}`")]
    DanglingClip { kind: &'static str, clip_id: String },

    #[error("duplicate {kind} for clip `{clip_id}`")]
    Duplicate { kind: &'static str, clip_id: String },

    #[error("missing channel `{channel}` on clip `{clip_id}`")]
    MissingChannel { clip_id: String, channel: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("serialization: {0}")]
    Serde(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing artifact {path}: run `{stage}` first")]
    MissingArtifact { stage: &'static str, path: PathBuf },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) => 2,
            Error::MissingArtifact { .. } => 3,
            Error::Numeric(_) => 4,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
