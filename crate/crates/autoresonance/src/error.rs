//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was non-finite or otherwise unusable.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Parameters put the model in a degenerate regime (e.g. the
    /// order-matching system of the coefficient recurrence is singular).
    #[error("degenerate parameters: {0}")]
    DegenerateParameters(String),

    /// A configuration value or descriptor is malformed.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// A numerical procedure failed (step underflow, fit failure, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::Domain(_)
            | Error::DegenerateParameters(_)
            | Error::Configuration(_) => 2,
            Error::Numerical(_) => 3,
            Error::Io(_) => 4,
        }
    }
}
