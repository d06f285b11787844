//! Crate-wide error type.
//!
//! Failures fall into three families: precondition violations on caller
//! input, requests outside the supported problem regime (these name the
//! violated precondition), and numerical failures discovered mid-run.

use thiserror::Error;

/// Errors produced by solvers, samplers, and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The operation was asked to run outside its supported regime; the
    /// message names the precondition that failed.
    #[error("unsupported regime: {0}")]
    Unsupported(String),

    /// A quantity that must stay finite became NaN or infinite. `where_`
    /// names the computation and `iteration` the loop index it failed at.
    #[error("non-finite value in {where_} at iteration {iteration}")]
    NonFinite { where_: String, iteration: usize },

    /// A numerical failure not tied to a loop index.
    #[error("runtime failure: {0}")]
    Runtime(String),

    /// File-format violation while reading persisted artifacts.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for an [`Error::InvalidInput`] with a formatted message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Shorthand for an [`Error::Unsupported`] with a formatted message.
    pub fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }
}
