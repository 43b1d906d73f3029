use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("no score for {} id(s): {}", .0.len(), .0.join(", "))]
    MissingScores(Vec<String>),

    #[error("{0}")]
    Validation(String),

    #[error("sequence of {len} tokens exceeds context length {max}")]
    TooLong { len: usize, max: usize },

    #[error("example `{id}`: {source}")]
    Example {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("model file checksum mismatch (corrupt or truncated file)")]
    Checksum,

    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("shape mismatch: expected {expected} values, got {found}")]
    Shape { expected: usize, found: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Runtime,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Attach the offending example id.
    pub fn for_example(self, id: &str) -> Self {
        Error::Example {
            id: id.to_owned(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::NonFinite(_) => ErrorKind::Runtime,
            Error::Example { source, .. } => source.kind(),
            _ => ErrorKind::Validation,
        }
    }
}
