//! Experiment harness for the `wgflow` samplers: TOML configs, method × seed
//! runs with CSV output, closed-form oracle checks and cross-seed reports.

pub mod config;
pub mod error;
pub mod experiment;
pub mod report;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use experiment::{oracle_check, run_experiment, MetricsRecord, OracleReport};
pub use report::{build_report, Report};
