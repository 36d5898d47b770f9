//! Experiment runner for the `zrp` command-line tool.

pub mod config;
pub mod error;
pub mod manifest;
pub mod runner;
pub mod sweep;

pub use config::{Command, ExperimentConfig, ResolvedConfig};
pub use error::{CliError, Result};
pub use manifest::RunManifest;
pub use runner::run;
