use thiserror::Error;

/// Errors raised by the plate library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("field has {got} values but the grid has {expected} nodes")]
    GridMismatch { expected: usize, got: usize },

    #[error("boundary class {0} requires a nonempty constrained boundary set")]
    EmptyGamma(&'static str),

    #[error("initial state violates the boundary constraints at {0} degrees of freedom")]
    ConstraintViolation(usize),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("in-plane load is not equilibrated (relative rigid-mode residual {0:e})")]
    NotEquilibrated(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
