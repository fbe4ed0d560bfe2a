use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("numerical consistency error: {0}")]
    Numerical(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("degenerate estimator: {0}")]
    Degenerate(String),
    #[error("convergence failure: {0}")]
    Convergence(String),
    #[error("refused: {0}")]
    Refused(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
