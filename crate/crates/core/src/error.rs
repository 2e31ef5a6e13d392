use thiserror::Error;

/// Errors raised by samplers, tree surgery and the evolution drivers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("lookup failed: {0}")]
    Lookup(String),
    #[error("below resolution: {0}")]
    Resolution(String),
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Parameter(msg()))
    }
}
