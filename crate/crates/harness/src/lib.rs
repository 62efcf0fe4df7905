//! Experiment orchestration for the `cbo-core` solvers: configuration,
//! seeded Monte Carlo runs, CSV/SVG artifacts and run comparison.

pub mod compare;
pub mod config;
pub mod csvio;
pub mod error;
pub mod experiment;
pub mod plot;

pub use config::{parse_config, ExperimentConfig, Init, Scheme};
pub use error::{ConfigError, HarnessError, Result};
pub use experiment::{run_experiment, RunManifest};
