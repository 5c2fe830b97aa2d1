//! Desk-scale federated learning on top of `flame-core`: datasets, a
//! logistic-regression model, baselines and the multi-round runner.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod model;
pub mod protocol;
pub mod sweep;

pub use error::{HarnessError, Result};
pub use experiment::{run_baseline, run_experiment, ExperimentConfig, ExperimentResult, Method};
