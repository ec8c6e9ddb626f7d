use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no periodic peaks found (found {found}, need at least 2)")]
    NoPeaks { found: usize },

    #[error("linearly dependent references")]
    DependentReferences,

    #[error("unsupported audio codec: {0}")]
    UnsupportedCodec(String),

    #[error("malformed audio file {path}: {reason}")]
    MalformedAudio { path: PathBuf, reason: String },

    #[error("manifest is missing required column `{0}`")]
    MissingColumn(String),

    #[error("malformed manifest row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("advisor failure: {0}")]
    Advisor(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 1,
            Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}
