//! Crate error type.

use thiserror::Error;

/// Errors produced by model construction, integration and synthesis.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or grid dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A scalar or grid parameter is out of its admissible range.
    #[error("invalid parameter: {0}")]
    Domain(String),

    /// Scenario file violated the schema.
    #[error("scenario schema: {0}")]
    Schema(String),

    /// The integrator produced a non-finite state.
    #[error("trajectory diverged at t = {t}")]
    Diverged { t: f64 },

    /// An operation that requires exponential stability was called on a
    /// system whose decay fit did not certify it.
    #[error("closed loop not exponentially stable ({0})")]
    NotStable(String),

    /// Synthesis could not proceed (unstable initial law, or an iterate
    /// destabilized and damping failed).
    #[error("synthesis failed: {0}")]
    Synthesis(String),

    /// A numerical routine failed (decay fit, eigen/SVD breakdown, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
