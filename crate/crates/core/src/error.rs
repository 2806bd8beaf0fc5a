use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the set where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Model parameters violate a standing assumption (e.g. `q2 > q1 > sigma2`).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A numerical routine failed to reach its tolerance or hit a singular system.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Not enough points, paths or truncations to produce a result.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
