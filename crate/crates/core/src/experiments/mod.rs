//! Scenario runners over the synthetic task, multi-seed aggregation and
//! report files.

mod config;
mod report;
mod runners;
pub mod stats;

pub use config::{apply_override, config_schema, ExperimentConfig, Profile, Scenario};
pub use report::{aggregate, Aggregate, CellRecord, CellStatus, Provenance, Report, Series, SeriesRow};
pub use runners::{
    run_experiment, run_few_shot, run_lambda_sweep, run_regularizer_comparison, run_target_comparison,
    run_temperature_sweep, run_trajectory, run_zero_shot,
};
