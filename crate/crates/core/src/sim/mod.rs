//! Two-region replication simulator.
//!
//! The writer region executes each write locally; a fast channel ships the
//! table's write log and a slow, heavy-tailed channel ships bucket objects to
//! the reader region. Probes in the reader region measure how often a visible
//! metadata or pointer record cannot be resolved to its payload.

mod calibrate;
mod config;
mod engine;
mod lag;
mod lww;
mod report;
mod stats;

use thiserror::Error;

pub use calibrate::{
    calibrate_lag_model, empirical_quantiles, verify_calibration, Calibration, QuantileTargets, Verification,
    CALIBRATION_TOLERANCE, VERIFICATION_DRAWS,
};
pub use config::{ConfigError, DbLagDraw, PatternSelection, ProbePolicy, SimConfig, RNG_ALGORITHM};
pub use engine::{
    run_experiment, run_pattern, sim_payload, ExperimentOutcome, Pattern, SimMetrics, Simulation, WriteTrace,
};
pub use lag::{LagModel, SimTime};
pub use lww::{lww_merge, lww_prefers_incoming};
pub use report::{parse_metrics_csv, render_report, MetricsRow, Report};
pub use stats::{mean, percentile};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("percentile of an empty sample set")]
    EmptySamples,
    #[error("quantile {0} outside (0, 1]")]
    InvalidQuantile(f64),
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("invalid lag model: {0}")]
    InvalidLagModel(String),
    #[error("item {0:?} has no version attribute")]
    MissingVersionAttribute(String),
    #[error("write path failed: {0}")]
    WritePath(String),
    #[error("metrics csv: {0}")]
    MetricsCsv(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
