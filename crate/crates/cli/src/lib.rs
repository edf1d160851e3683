//! Configuration and experiment runner behind the `fedtwin` binary.

pub mod config;
pub mod run;

pub use config::{validate, ConfigError, ConfigIssue, Experiment, ExperimentConfig, RunMode, Validation};
pub use run::{run_experiment, write_manifest, Manifest, ManifestEntry, RunError, RunOptions, RunSummary, MANIFEST};
