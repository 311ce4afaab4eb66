//! Error type shared by the whole crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A matrix that was expected to be Hermitian is not (within tolerance).
    #[error("matrix is not Hermitian: max asymmetry {max_asymmetry:.3e} exceeds {tolerance:.3e}")]
    NotHermitian { max_asymmetry: f64, tolerance: f64 },

    /// A matrix that must be positive definite is singular or indefinite.
    #[error("matrix is not positive definite ({detail})")]
    NotPositiveDefinite { detail: String },

    /// A non-square matrix was passed where a square one is required.
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    /// An observed block of the covariance is numerically singular.
    #[error("observed block of snapshot {snapshot} is numerically singular ({detail})")]
    SingularObservedBlock { snapshot: usize, detail: String },

    /// Invalid value for a named parameter or configuration field.
    #[error("invalid {field}: {message}")]
    InvalidParameter { field: String, message: String },

    /// Dimension mismatch between two related objects.
    #[error("dimension mismatch: {message}")]
    DimensionMismatch { message: String },

    /// An internal invariant was violated (indicates a bug, not bad input).
    #[error("internal invariant violated: {message}")]
    InvariantViolation { message: String },

    /// Failure while reading or parsing an input file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn dim(message: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            message: message.into(),
        }
    }
}
