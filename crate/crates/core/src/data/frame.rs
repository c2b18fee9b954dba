use std::ops::Range;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    /// `None` marks a missing observation.
    pub values: Vec<Option<f64>>,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }

    pub fn dense(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self::new(name, values.into_iter().map(Some).collect())
    }
}

/// Min/max observed before scaling into `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub min: f64,
    pub max: f64,
    pub lo: f64,
    pub hi: f64,
}

impl NormParams {
    pub fn apply(&self, v: f64) -> f64 {
        if self.max > self.min {
            self.lo + (self.hi - self.lo) * (v - self.min) / (self.max - self.min)
        } else {
            self.lo
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        if self.max > self.min {
            self.min + (v - self.lo) * (self.max - self.min) / (self.hi - self.lo)
        } else {
            self.min
        }
    }
}

/// Contiguous block of rows belonging to one entity (a drive serial, say).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub rows: Range<usize>,
}

/// Timestamp-indexed multivariate series with a designated target column.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    id: String,
    timestamps: Vec<NaiveDateTime>,
    columns: Vec<Column>,
    target: usize,
    norm: Vec<Option<NormParams>>,
    segments: Vec<Segment>,
}

impl SeriesFrame {
    pub fn new(
        id: impl Into<String>,
        timestamps: Vec<NaiveDateTime>,
        columns: Vec<Column>,
        target: &str,
    ) -> Result<Self, DataError> {
        let n = timestamps.len();
        let segments = vec![Segment {
            name: String::new(),
            rows: 0..n,
        }];
        Self::with_segments(id, timestamps, columns, target, segments)
    }

    /// Timestamps must increase strictly inside each segment; segments must tile the rows in order.
    pub fn with_segments(
        id: impl Into<String>,
        timestamps: Vec<NaiveDateTime>,
        columns: Vec<Column>,
        target: &str,
        segments: Vec<Segment>,
    ) -> Result<Self, DataError> {
        let n = timestamps.len();
        if columns.is_empty() {
            return Err(DataError::Invalid("frame has no columns".into()));
        }
        for c in &columns {
            if c.values.len() != n {
                return Err(DataError::Shape(format!(
                    "column {} has {} values, expected {n}",
                    c.name,
                    c.values.len()
                )));
            }
        }
        let target = columns
            .iter()
            .position(|c| c.name == target)
            .ok_or_else(|| DataError::UnknownColumn(target.to_string()))?;
        let mut next = 0;
        for s in &segments {
            if s.rows.start != next || s.rows.end < s.rows.start {
                return Err(DataError::Invalid(format!("segment {} does not tile the frame", s.name)));
            }
            next = s.rows.end;
            for r in s.rows.start + 1..s.rows.end {
                if timestamps[r] <= timestamps[r - 1] {
                    return Err(DataError::Invalid(format!(
                        "timestamps not strictly increasing at row {r} ({} after {})",
                        timestamps[r],
                        timestamps[r - 1]
                    )));
                }
            }
        }
        if next != n {
            return Err(DataError::Invalid("segments do not cover the frame".into()));
        }
        let norm = vec![None; columns.len()];
        Ok(Self {
            id: id.into(),
            timestamps,
            columns,
            target,
            norm,
            segments,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_name(&self, i: usize) -> &str {
        &self.columns[i].name
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn target_name(&self) -> &str {
        &self.columns[self.target].name
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment_ranges(&self) -> Vec<Range<usize>> {
        self.segments.iter().map(|s| s.rows.clone()).collect()
    }

    pub fn norm_params(&self) -> &[Option<NormParams>] {
        &self.norm
    }

    /// Values of a column; fails if any cell is missing.
    pub fn column_values(&self, i: usize) -> Result<Vec<f64>, DataError> {
        self.columns[i]
            .values
            .iter()
            .enumerate()
            .map(|(r, v)| {
                v.ok_or_else(|| DataError::Missing {
                    column: self.columns[i].name.clone(),
                    row: r,
                })
            })
            .collect()
    }

    pub fn missing_count(&self) -> usize {
        self.columns
            .iter()
            .map(|c| c.values.iter().filter(|v| v.is_none()).count())
            .sum()
    }

    pub(crate) fn replace_columns(&self, columns: Vec<Column>, norm: Vec<Option<NormParams>>) -> Self {
        debug_assert_eq!(columns.len(), self.columns.len());
        Self {
            id: self.id.clone(),
            timestamps: self.timestamps.clone(),
            columns,
            target: self.target,
            norm,
            segments: self.segments.clone(),
        }
    }

    /// Keeps the named columns in the given order. The target must be among them.
    pub fn select_columns(&self, names: &[String]) -> Result<Self, DataError> {
        let mut columns = Vec::with_capacity(names.len());
        let mut norm = Vec::with_capacity(names.len());
        for n in names {
            let i = self.column_index(n).ok_or_else(|| DataError::UnknownColumn(n.clone()))?;
            columns.push(self.columns[i].clone());
            norm.push(self.norm[i]);
        }
        let target = columns
            .iter()
            .position(|c| c.name == self.target_name())
            .ok_or_else(|| DataError::Invalid(format!("selection drops target column {}", self.target_name())))?;
        Ok(Self {
            id: self.id.clone(),
            timestamps: self.timestamps.clone(),
            columns,
            target,
            norm,
            segments: self.segments.clone(),
        })
    }

    /// Rows `range` as a standalone single-segment frame.
    pub fn slice_rows(&self, range: Range<usize>) -> Result<Self, DataError> {
        let columns = self
            .columns
            .iter()
            .map(|c| Column::new(c.name.clone(), c.values[range.clone()].to_vec()))
            .collect();
        let mut out = Self::new(
            self.id.clone(),
            self.timestamps[range].to_vec(),
            columns,
            self.target_name(),
        )?;
        out.norm = self.norm.clone();
        Ok(out)
    }
}
