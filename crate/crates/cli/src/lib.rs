//! Experiment driver for the FedVQCS simulator: configuration files, scenario
//! runners and CSV artifacts.

pub mod config;
pub mod run;

pub use config::{ExperimentConfig, Scenario, DATA_DIR_ENV};
pub use run::{run_experiment, RunSummary};
