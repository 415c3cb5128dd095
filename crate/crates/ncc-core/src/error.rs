//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A level violates its structural invariants (start on wall, empty payoff, ...).
    #[error("invalid level: {0}")]
    InvalidLevel(String),

    /// A caller-supplied argument is out of its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two inputs that must be aligned (lengths, level ids) disagree.
    #[error("mismatch: {0}")]
    Mismatch(String),

    /// A NaN or infinity reached a place that requires finite values.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The requested computation is outside the supported regime
    /// (e.g. exact enumeration above the size cap).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// An iterative solver hit its iteration cap before reaching tolerance.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// A config or checkpoint file failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
