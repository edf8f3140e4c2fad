//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A schedule, mixture, condition or latent violated a structural invariant.
    #[error("domain: {0}")]
    Domain(String),
    /// Vector/image dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A prompt matched no known concept.
    #[error("unschedulable prompt: {0:?} matched no concept")]
    UnschedulablePrompt(String),
    /// Scenario/graph file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    /// Config contents violate the scenario schema.
    #[error("config: {0}")]
    Config(String),
    /// A cached entry did not match the fingerprint it was filed under.
    #[error("cache integrity: {0}")]
    CacheIntegrity(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Exit-code category for the CLI: 2 = config/usage, 3 = io, 4 = domain.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Config(_) => 2,
            Error::Io(_) => 3,
            _ => 4,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } | Error::Config(_) => "config",
            Error::Io(_) => "io",
            _ => "domain",
        }
    }
}
