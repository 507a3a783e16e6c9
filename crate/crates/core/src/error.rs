//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by graph construction, decomposition, and training.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (bad indices, shape mismatches,
    /// unparsable files, manifest disagreements).
    #[error("data error: {0}")]
    Data(String),

    /// The iterative eigensolver hit its iteration cap. Carries the residual
    /// norms of the columns that had not converged.
    #[error("eigensolver did not converge after {iterations} iterations; {} columns above tolerance, worst residual {worst:.3e}", residuals.len())]
    SolverDidNotConverge {
        iterations: usize,
        residuals: Vec<f64>,
        worst: f64,
    },

    /// A non-finite value appeared during numeric work; the string names the
    /// computation that produced it.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A caller violated an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
