use thiserror::Error;

/// Errors raised by the solvers and measure primitives.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("ensemble must contain at least one particle")]
    EmptyEnsemble,

    #[error("non-finite coordinate at particle {index}")]
    NonFinitePosition { index: usize },

    #[error("objective returned a non-finite value at particle {index}")]
    NonFiniteObjective { index: usize },

    #[error("ensembles have different particle counts ({left} vs {right})")]
    UnequalCounts { left: usize, right: usize },

    #[error(
        "state became non-finite at step {step} (particle {index}); time step likely too large"
    )]
    Unstable { step: usize, index: usize },

    #[error(
        "implicit solve did not converge after {iterations} iterations (residual {residual:.3e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("quantile grid lost monotonicity at node {index} (gap {gap:.3e})")]
    NotMonotone { index: usize, gap: f64 },

    #[error("objective metadata missing: {0}")]
    MissingMetadata(&'static str),

    #[error("series has too few usable samples ({0}) for a fit")]
    TooFewSamples(usize),

    #[error("non-positive value {value:.3e} at t={t} in fit window")]
    NonPositiveSample { t: f64, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn require(cond: bool, name: &'static str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: reason.to_string(),
        })
    }
}
