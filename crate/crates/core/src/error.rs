use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A row or line of an input file could not be parsed. Lines are 1-based
    /// and count data rows (the csv header is not counted).
    #[error("{path}: line {line}: field `{field}`: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    /// A value violates a documented invariant. `field` is a dotted path into
    /// the offending document where one exists.
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("duplicate {kind} `{id}`")]
    Duplicate { kind: &'static str, id: String },

    #[error("unknown {kind} `{id}`")]
    Unknown { kind: &'static str, id: String },

    /// The request is well formed but clashes with the current state.
    #[error("{0}")]
    Conflict(String),

    #[error("empty log")]
    EmptyLog,

    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn unknown(kind: &'static str, id: impl Into<String>) -> Self {
        Error::Unknown {
            kind,
            id: id.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by the environment.
    pub fn is_invalid_input(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation { .. }
                | Error::Duplicate { .. }
                | Error::Unknown { .. }
                | Error::Conflict(_)
                | Error::EmptyLog
        )
    }
}
