//! Experiment driver for the `gflsim` simulator: configuration files,
//! end-to-end runs, parameter sweeps and reproducible artifacts.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod run;

pub use commands::{cmd_attack, cmd_report, cmd_sweep, cmd_train, RunOptions, SweepTable};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult, Stage};
