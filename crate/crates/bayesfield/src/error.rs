//! Shared error type for the library.

use std::path::PathBuf;

/// Errors produced anywhere in the library.
///
/// Variants are grouped by how callers should react: malformed inputs
/// (specs, configs, tables), incompatible persisted state (checkpoints that
/// do not match the active config), and numerical failures during fitting or
/// prediction. The command-line tool maps these groups onto distinct exit
/// codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A vector or table had the wrong length for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// A spec or config failed validation.
    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    /// An input value was NaN or infinite where a finite number is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An operation that needs data received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A delimited table failed to parse.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Two rows claim the same (location, timestamp) cell.
    #[error(
        "duplicate observation for location {location:?} at {timestamp} \
         (rows {first_row} and {second_row})"
    )]
    DuplicateObservation {
        location: String,
        timestamp: String,
        first_row: usize,
        second_row: usize,
    },

    /// Persisted state (checkpoint, manifest) does not match the active config.
    #[error("incompatible state: {0}")]
    Incompatible(String),

    /// A computation produced non-finite values or failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An I/O operation failed; the path is named for diagnostics.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed user input rather than internal
    /// state or numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Incompatible(_) | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
