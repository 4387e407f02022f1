use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ArsvError>;

#[derive(Debug, Error)]
pub enum ArsvError {
    /// Model or option parameters outside their admissible domain.
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A volatility estimate of zero makes a pricing kernel undefined.
    #[error("degenerate volatility at step {step}: sigma_hat = {sigma_hat}")]
    DegenerateVolatility { step: usize, sigma_hat: f64 },

    #[error("degenerate hedge denominator {denom:e} (threshold {threshold:e})")]
    DegenerateDenominator { denom: f64, threshold: f64 },

    /// Safeguarded Newton did not reach the requested residual.
    #[error("no convergence after {iterations} iterations (last iterate {last}, residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        residual: f64,
    },

    #[error("all {n} Monte Carlo sub-paths were censored")]
    AllCensored { n: usize },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl ArsvError {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ArsvError::DegenerateVolatility { .. }
                | ArsvError::DegenerateDenominator { .. }
                | ArsvError::NonConvergence { .. }
                | ArsvError::AllCensored { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ArsvError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        ArsvError::Csv {
            path: path.into(),
            source,
        }
    }
}
