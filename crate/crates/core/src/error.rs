use thiserror::Error;

use crate::estimators::BatchResult;

/// Errors produced anywhere in the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A state left the physical domain (non-positive mass or inertia).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("unobservable problem: {0}")]
    Unobservable(String),

    #[error("batch least squares did not converge after {iterations} iterations (last correction {last_correction:e})")]
    NonConvergence {
        iterations: usize,
        last_correction: f64,
        last: Box<BatchResult>,
    },

    #[error("numerical failure at step {step}: {reason}")]
    NumericalFailure { step: usize, reason: String },

    #[error("closed-loop simulation diverged at t = {t} s")]
    Divergence { t: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable tag, used by the CLI's structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Domain(_) => "domain",
            Error::Configuration(_) => "configuration",
            Error::Singular(_) => "singular",
            Error::Unobservable(_) => "unobservable",
            Error::NonConvergence { .. } => "non-convergence",
            Error::NumericalFailure { .. } => "numerical-failure",
            Error::Divergence { .. } => "divergence",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
