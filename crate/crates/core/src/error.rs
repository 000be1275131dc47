//! Crate-wide error type.
//!
//! Variants are grouped by how the caller should react: `Config` means the
//! inputs were malformed (wrong dimensions, invalid parameters, bad files),
//! `Numerical` means the computation itself failed (singular systems,
//! trajectory blow-up, non-convergence).

use thiserror::Error;

/// Error type for all fallible operations in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input: dimensions, parameter ranges, file contents.
    #[error("config error: {0}")]
    Config(String),

    /// Numerical failure: singular matrix, divergence, blow-up.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Underlying I/O failure (file read/write).
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed or unreadable CSV input.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Build a `Config` error from anything displayable.
    pub fn config(msg: impl std::fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    /// Build a `Numerical` error from anything displayable.
    pub fn numerical(msg: impl std::fmt::Display) -> Self {
        Error::Numerical(msg.to_string())
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
