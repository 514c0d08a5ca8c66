use thiserror::Error;

/// Crate-wide error type. Variants map to CLI exit codes: `InvalidArgument`
/// and `CapExceeded` are usage errors (exit 2), everything else is a
/// validation or runtime failure (exit 1).
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text (trace, design space, weights, profile).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Structurally well-formed input that violates an invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Caller passed an argument outside the supported domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Rank encoding/decoding failure against a design space.
    #[error("encoding error for parameter '{param}': {msg}")]
    Encoding { param: String, msg: String },

    /// Unknown mnemonic in strict tokenization, or sequence too long.
    #[error("tokenization error: {0}")]
    Tokenization(String),

    /// Tensor or sequence dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Model used in a role it was not built for (P vs M, metric, subset).
    #[error("model mode mismatch: {0}")]
    Mode(String),

    /// Enumeration would exceed the configured cap.
    #[error("search space too large: {0}")]
    CapExceeded(String),

    /// Dataset file inconsistent with itself or with the given space/dict.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Checkpoint file unreadable or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn encoding(param: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Encoding { param: param.into(), msg: msg.into() }
    }
}
