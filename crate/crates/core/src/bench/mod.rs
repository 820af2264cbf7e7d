//! Episode logs, metrics and the experiment runners.

pub mod log;
pub mod matrix;
pub mod metrics;

pub use log::{CandidateRecord, EpisodeLog, WeekRecord};
pub use matrix::{
    fit_engine, run_matrix, run_trust_sweep, scripted_factory, write_matrix_outputs,
    write_sweep_outputs, BenchConfig, Cell, CellResult, StrategistFactory, DEFAULT_MULTIPLIERS,
};
pub use metrics::{compute_metrics, summarize, MetricsSummary};
