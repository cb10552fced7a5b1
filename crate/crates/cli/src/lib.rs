//! Experiment driver for the `scoba` command-line tool.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

/// Overrides the default output directory.
pub const ENV_OUT_DIR: &str = "SCOBA_OUT_DIR";
/// Overrides the worker thread count.
pub const ENV_WORKERS: &str = "SCOBA_WORKERS";
