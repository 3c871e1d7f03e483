//! Experiment runner for preconditioned gradient descent: synthetic data,
//! CSV ingestion, training runs, learning-rate sweeps and verification suites.

pub mod config;
pub mod data;
pub mod diagnose;
pub mod error;
pub mod experiment;
pub mod sweep;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use experiment::Experiment;
