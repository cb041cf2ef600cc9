//! Error type shared across the toolkit.
//!
//! The CLI maps variants onto distinct exit codes, so keep the classification
//! stable: usage mistakes, I/O failures, malformed files, and numeric
//! breakdowns are different things.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file contents (corpus, split, or model container).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A precondition on arguments or data was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Bad magic, truncated payload, or a kind mismatch in a model file.
    #[error("model format error: {0}")]
    Format(String),

    #[error("unsupported model format version {0} (expected {1})")]
    Version(u32, u32),

    /// Non-finite loss or gradient.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) => 2,
            Error::Io(_) => 3,
            Error::Parse { .. } | Error::Format(_) | Error::Version(..) => 4,
            Error::Numeric(_) => 5,
        }
    }
}
