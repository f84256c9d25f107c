//! Experiment runner for `batchreg`: strict JSON configs, seeded trials,
//! CSV results, reproduction manifests and the oracle check suites.

pub mod checks;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod manifest;
pub mod stats;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
