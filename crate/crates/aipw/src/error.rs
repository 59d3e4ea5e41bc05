//! Error taxonomy shared across the crate.
//!
//! Three classes cover everything that can go wrong, and they map one-to-one
//! onto the CLI exit codes: invalid input (2), numerical failure (3),
//! degenerate data (4).

use std::fmt;

/// Failure classes for estimation, threshold selection, and simulation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Caller-supplied arguments violate a documented precondition
    /// (out-of-range parameter, mismatched lengths, malformed input file).
    InvalidInput(String),
    /// A well-posed computation failed numerically (division guard hit,
    /// no admissible root, non-finite intermediate).
    Numerical(String),
    /// The data cannot support the requested computation (no treated
    /// observations in a training fold, empty trimmed sample, too many
    /// failed replicates).
    Degenerate(String),
}

impl Error {
    /// Process exit code the CLI maps this error class to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) => 2,
            Error::Numerical(_) => 3,
            Error::Degenerate(_) => 4,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::Degenerate(msg) => write!(f, "degenerate data: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
