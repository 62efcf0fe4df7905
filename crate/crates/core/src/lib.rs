//! Consensus-based optimization: the stochastic particle scheme, a
//! deterministic mollified porous-media variant, the one-dimensional
//! mean-field solver on quantile functions, and diagnostics that check the
//! concentration estimates numerically.

#![cfg_attr(test, allow(clippy::excessive_precision))]

pub mod cbo_particle;
pub mod diagnostics;
pub mod error;
pub mod measure;
pub mod objective;
pub mod porous_particle;
pub mod pseudo_inverse;
pub mod quadrature;
pub mod series;

pub use cbo_particle::{CboParams, RngSpec};
pub use error::{Error, Result};
pub use measure::{Ensemble, WeightedStats};
pub use objective::{make_ackley, make_quadratic, Constants, Objective};
pub use porous_particle::{Mollifier, PorousParams};
pub use pseudo_inverse::{ChiSolverParams, QuantileGrid};
pub use series::{DiagnosticsSeries, SeriesField, Snapshot, Termination};
