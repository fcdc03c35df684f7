//! Experiment orchestration for exploration-schedule strategies: config
//! loading, parallel sweeps and CSV reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod error;
pub mod reports;
pub mod sweep;

pub use config::{load_config, ExperimentConfig};
pub use error::HarnessError;
pub use reports::{emit_reports, parse_regret_table};
pub use sweep::{run_sweep, SweepResult};
