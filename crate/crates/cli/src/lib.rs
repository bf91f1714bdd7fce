//! Command-line layer: configuration, experiment drivers and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod lab;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
