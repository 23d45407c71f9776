//! Error type shared across the crate.

use thiserror::Error;

/// Errors surfaced by construction, evaluation, and certification routines.
#[derive(Debug, Error)]
pub enum MildError {
    /// Structural problem in an input (arity mismatch, empty index, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A point lies outside the domain an operation is defined on.
    #[error("point outside domain: {0}")]
    DomainViolation(String),

    /// A parameter regime the implemented bounds do not cover.
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    /// Two certificates cannot be combined (e.g. plain with weighted).
    #[error("incompatible certificates: {0}")]
    IncompatibleCerts(String),

    /// Serialized data failed to parse or validate.
    #[error("malformed data: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, MildError>;
