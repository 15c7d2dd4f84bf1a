use std::time::Duration;

use thiserror::Error;

use crate::solvers::Divergence;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    Format(String),

    /// The external denoiser could not be started or reached. Retryable.
    #[error("denoiser endpoint unreachable: {0}")]
    EndpointUnreachable(String),

    #[error("denoiser did not answer within {0:?}")]
    Timeout(Duration),

    #[error("denoiser protocol violation: {0}")]
    Protocol(String),

    #[error("denoiser server reported failure: {0}")]
    Server(String),

    #[error("non-finite values produced by {0}")]
    NonFinite(String),

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("{0}")]
    Diverged(Box<Divergence>),

    #[error("every grid point diverged")]
    AllDiverged,
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for failures where retrying against a fresh connection may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::EndpointUnreachable(_) | Error::Timeout(_))
    }
}
