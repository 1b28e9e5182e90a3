//! Experiment configs, runners and reports for `fedbayes-core`.

pub mod config;
pub mod error;
pub mod panel;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, Format};
pub use error::{HarnessError, Result};
pub use report::{emit_report, render, ExperimentReport};
pub use run::{evaluate_mse, run_experiment};
