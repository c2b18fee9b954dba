//! Config-driven experiment runner: ingest, train, attack, defend, report.

mod config;
mod pipeline;
mod report;

pub use config::{
    AttackGrid, DatasetConfig, DefenseSettings, ExperimentConfig, ModelConfig, PreprocessConfig, SweepConfig,
    SCHEMA_VERSION,
};
pub use pipeline::{lookback_sweep, prepare_data, run, run_stage, train_baseline, BaselineRun, PreparedData, Stage};
pub use report::{
    emit_plot_data, num, plot_tables, read_series, report_tables, write_tables, AttackRow, AttackSection, CleanSection,
    CsvTable, CvSummary, DatasetSummary, DefenseSection, DefenseSummary, ExperimentReport, FoldResult, Overlay,
    PerturbationSummary, StageTiming, SweepPoint,
};

use thiserror::Error;

use crate::attacks::AttackError;
use crate::data::DataError;
use crate::defenses::DefenseError;
use crate::models::{CheckpointError, ModelError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("[{stage}] {message}")]
    Stage { stage: String, message: String },
}
