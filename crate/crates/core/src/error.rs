//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A quaternion argument is not unit-norm within tolerance.
    #[error("quaternion norm {norm} deviates from 1 by more than {tol}")]
    NonUnitQuaternion { norm: f64, tol: f64 },

    /// A 6D rotation input has near-zero or parallel columns.
    #[error("degenerate 6D rotation input: {0}")]
    Degenerate6d(String),

    /// Vector or matrix extents do not line up.
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A parameter violates its documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A config file failed validation, with the violated bound named.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A structured-text record could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
