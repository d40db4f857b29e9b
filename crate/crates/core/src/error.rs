use thiserror::Error;

/// Errors raised anywhere in the pricing stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("quadrature did not converge: achieved error {achieved:.3e} against target {target:.3e}")]
    Quadrature { achieved: f64, target: f64 },

    #[error("state out of range: {0}")]
    OutOfRange(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations; ratio history {ratios:?}")]
    NonConvergence { iterations: usize, ratios: Vec<f64> },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
