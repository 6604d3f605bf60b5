use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("vector is not unit length (|n| = {norm})")]
    NotUnit { norm: f64 },
    #[error("undefined input: {0}")]
    Undefined(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("region rejected: {0}")]
    Region(String),
    #[error("topology: {0}")]
    Topology(String),
    #[error("format: {0}")]
    Format(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
