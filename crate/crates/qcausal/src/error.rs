//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A dimension product overflowed or a matrix shape is malformed.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Factor indices, permutations or party layouts do not line up.
    #[error("layout error: {0}")]
    Layout(String),

    /// A caller-supplied structure violates an operation contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A file could not be parsed into the expected format.
    #[error("parse error: {0}")]
    Parse(String),

    /// An input process matrix failed validation and was rejected.
    #[error("rejected input: {0}")]
    Validation(String),

    /// An internal numerical routine failed to converge.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
