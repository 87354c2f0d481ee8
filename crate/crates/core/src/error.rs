use std::path::PathBuf;

use crate::composition::FeasibilityError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("invalid recipe: {0}")]
    Recipe(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown name `{name}` at byte {offset}")]
    UnknownName { name: String, offset: usize },

    #[error(transparent)]
    Feasibility(#[from] FeasibilityError),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("shape mismatch: expected {expected} columns, got {actual}")]
    Width { expected: usize, actual: usize },

    #[error("degenerate scorer refs: {0}")]
    DegenerateRefs(String),

    #[error("search failed: {0}")]
    Search(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
