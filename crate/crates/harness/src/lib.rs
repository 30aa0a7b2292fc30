//! Experiment runner for node-perturbation training: configuration, training
//! loops, sweeps, noise characterization and metrics files.

pub mod characterize;
pub mod config;
pub mod error;
pub mod metrics;
pub mod runner;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
