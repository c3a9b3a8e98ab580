use thiserror::Error;

/// Errors produced by the model, inference and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A distribution or model parameter violates its constraint.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A point lies outside the support of the distribution evaluating it.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested operation is not defined for this distribution family.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Array dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration file or key could not be interpreted.
    #[error("config error: {0}")]
    Config(String),

    /// Observed data are inconsistent with the declared domain or family.
    #[error("data error: {0}")]
    Data(String),

    /// A linear-algebra or numerical routine failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
