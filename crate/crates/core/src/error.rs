use thiserror::Error;

/// Errors raised by the simulation and oracle engines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// The caller broke an operation's preconditions (sizes, counts, ordering).
    #[error("usage error: {0}")]
    Usage(String),
    /// The requested combination has no implementation (e.g. no closed form and Monte Carlo disabled).
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A coordinate transform hit a point where it is undefined.
    #[error("degenerate point: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
