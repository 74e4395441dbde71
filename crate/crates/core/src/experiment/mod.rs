//! Config-driven experiments with JSON and CSV outputs.

mod config;
mod run;

pub use config::{ConfigIssue, DataConfig, ErmConfig, ExperimentConfig, ExperimentKind, RawConfig};
pub use run::{config_hash, run, Aggregate, ExperimentResult, MetricRecord, SeedFailure, Table};
