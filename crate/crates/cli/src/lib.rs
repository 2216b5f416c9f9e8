//! Configuration, experiment orchestration, evaluation statistics and export
//! for the `deep2fbsde` command-line tool.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod stats;

pub use config::ExperimentConfig;
