use thiserror::Error;

/// Errors raised by the library. Each variant corresponds to one layer of
/// the certification pipeline so callers can attribute failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "regularized Gram matrix is not positive definite to working precision \
         (pivot {pivot} of {dim}); increase the regularization constant lambda"
    )]
    NotPositiveDefinite { pivot: usize, dim: usize },

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("degree bookkeeping failed for constraint `{constraint}`: {reason}; increase multiplier_degree")]
    DegreeBookkeeping { constraint: String, reason: String },

    #[error("SDP solver did not reach an optimal point: {0}")]
    Solver(String),

    #[error("certificate check failed: {0}")]
    Certificate(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
