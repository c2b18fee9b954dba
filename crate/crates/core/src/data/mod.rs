//! Ingestion, cleaning, normalization, windowing, RUL labeling, temporal
//! splitting, correlation-based feature selection and synthetic surrogates.

mod electricity;
mod features;
mod frame;
mod hdd;
mod preprocess;
mod splits;
mod synth;
mod windows;

pub use electricity::{load_electricity, write_electricity_csv, ELECTRICITY_COLUMNS, ELECTRICITY_TARGET};
pub use features::{correlation_matrix, select_features, CorrelationMatrix, FeatureSelection};
pub use frame::{Column, NormParams, Segment, SeriesFrame};
pub use hdd::{
    build_rul_frame, label_rul, read_backblaze_csv, read_backblaze_dir, write_backblaze_csv, DriveLog, DriveRow,
    RulFrameOptions, RulLabel,
};
pub use preprocess::{denormalize, impute_column_mean, minmax_normalize, minmax_normalize_features, resample_daily, Aggregation};
pub use splits::{train_val_test_split, walk_forward_splits, Fold, FoldPlan, SplitRanges};
pub use synth::{synth_drive_log, synth_series, DegradationParams, SeasonalParams, SynthKind};
pub use windows::{make_windows, Provenance, WindowMode, WindowStamp, WindowedDataset};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    ColumnCount { line: u64, expected: usize, found: usize },
    #[error("input contains no data rows")]
    Empty,
    #[error("column {column} is missing a value at row {row}")]
    Missing { column: String, row: usize },
    #[error("column {0} has no observed values")]
    AllMissing(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("serial {serial} reports failure on {count} days")]
    MultipleFailures { serial: String, count: usize },
    #[error("series has {rows} rows, at least {needed} required")]
    TooShort { rows: usize, needed: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{0}")]
    Invalid(String),
}
