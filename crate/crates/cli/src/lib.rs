//! Experiment runner: single training runs, resumable sweeps over loss and
//! regulariser grids, and the aggregate tables built from their results.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod report;
pub mod smooth;
pub mod sweep;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("invalid sweep: {0}")]
    Sweep(String),
    #[error(transparent)]
    Train(#[from] advloss_dantest::TrainError),
    #[error(transparent)]
    Data(#[from] advloss_dantest::DataError),
    #[error(transparent)]
    Core(#[from] advloss_core::CoreError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

pub use experiments::{experiment, Scale, EXPERIMENTS};
pub use report::{report_table, TableCell};
pub use smooth::{median_filter, smooth_series};
pub use sweep::{aggregate, run_sweep, CellKey, Regularizer, SweepSpec};
