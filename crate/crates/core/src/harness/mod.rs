//! Experiment harness: configuration, the CLI subcommands, CSV rows and
//! SVG plots.

pub mod commands;
pub mod config;
pub mod plot;
pub mod report;
pub mod selftest;

pub use commands::{exit_code, Overrides, Status};
pub use config::ExperimentConfig;
