//! Supervised windows cut from a [`SeriesFrame`].

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::frame::SeriesFrame;
use super::DataError;
use crate::autodiff::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowMode {
    /// Inputs are rows `t-L..t-1` (all columns, target included); the target is the target column at `t`.
    NextStep,
    /// Inputs are rows `t-L..t-1` (feature columns only); targets are the target column on those same rows.
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowStamp {
    pub input_start: NaiveDateTime,
    pub input_end: NaiveDateTime,
    /// Forecast timestamp for next-step windows.
    pub target: Option<NaiveDateTime>,
    pub segment: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub split: String,
}

/// `N` windows of `L x F` inputs with `N x O` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset<T> {
    inputs: Tensor<T>,
    targets: Tensor<T>,
    lookback: usize,
    feature_names: Vec<String>,
    stamps: Vec<WindowStamp>,
    provenance: Provenance,
}

impl<T: Scalar> WindowedDataset<T> {
    pub fn new(
        inputs: Tensor<T>,
        targets: Tensor<T>,
        feature_names: Vec<String>,
        stamps: Vec<WindowStamp>,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        let (n, l, f) = match inputs.shape() {
            &[n, l, f] => (n, l, f),
            s => return Err(DataError::Shape(format!("inputs must be [N, L, F], got {s:?}"))),
        };
        if targets.shape().len() != 2 || targets.shape()[0] != n {
            return Err(DataError::Shape(format!(
                "targets must be [{n}, O], got {:?}",
                targets.shape()
            )));
        }
        if feature_names.len() != f {
            return Err(DataError::Shape(format!("{} feature names for {f} features", feature_names.len())));
        }
        if stamps.len() != n {
            return Err(DataError::Shape(format!("{} stamps for {n} windows", stamps.len())));
        }
        Ok(Self {
            inputs,
            targets,
            lookback: l,
            feature_names,
            stamps,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn n_features(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn target_len(&self) -> usize {
        self.targets.shape()[1]
    }

    pub fn inputs(&self) -> &Tensor<T> {
        &self.inputs
    }

    pub fn targets(&self) -> &Tensor<T> {
        &self.targets
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn stamps(&self) -> &[WindowStamp] {
        &self.stamps
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    fn window_size(&self) -> usize {
        self.lookback * self.n_features()
    }

    /// Stacks the selected windows into `([B, L, F], [B, O])` tensors.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<T>, Tensor<T>) {
        let w = self.window_size();
        let o = self.target_len();
        let mut x = Vec::with_capacity(indices.len() * w);
        let mut y = Vec::with_capacity(indices.len() * o);
        for &i in indices {
            x.extend_from_slice(&self.inputs.data()[i * w..(i + 1) * w]);
            y.extend_from_slice(&self.targets.data()[i * o..(i + 1) * o]);
        }
        (
            Tensor::new(vec![indices.len(), self.lookback, self.n_features()], x).expect("window shape"),
            Tensor::new(vec![indices.len(), o], y).expect("target shape"),
        )
    }

    pub fn subset(&self, indices: &[usize], split: &str) -> Self {
        let (inputs, targets) = self.gather(indices);
        Self {
            inputs,
            targets,
            lookback: self.lookback,
            feature_names: self.feature_names.clone(),
            stamps: indices.iter().map(|&i| self.stamps[i].clone()).collect(),
            provenance: Provenance {
                source: self.provenance.source.clone(),
                split: split.to_string(),
            },
        }
    }

    pub fn range(&self, range: std::ops::Range<usize>, split: &str) -> Self {
        let idx: Vec<usize> = range.collect();
        self.subset(&idx, split)
    }

    /// Same windows and targets with replaced inputs (used for adversarial copies).
    pub fn with_inputs(&self, inputs: Tensor<T>, split: &str) -> Result<Self, DataError> {
        if inputs.shape() != self.inputs.shape() {
            return Err(DataError::Shape(format!(
                "replacement inputs {:?} differ from {:?}",
                inputs.shape(),
                self.inputs.shape()
            )));
        }
        let mut out = self.clone();
        out.inputs = inputs;
        out.provenance.split = split.to_string();
        Ok(out)
    }

    /// Concatenates datasets with identical window geometry, in order.
    pub fn concat(parts: &[Self], split: &str) -> Result<Self, DataError> {
        let first = parts.first().ok_or_else(|| DataError::Shape("concat of zero datasets".into()))?;
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut stamps = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.inputs.shape()[1..] != first.inputs.shape()[1..] || p.target_len() != first.target_len() {
                return Err(DataError::Shape("concat of datasets with different window shapes".into()));
            }
            x.extend_from_slice(p.inputs.data());
            y.extend_from_slice(p.targets.data());
            stamps.extend(p.stamps.iter().cloned());
            n += p.len();
        }
        Ok(Self {
            inputs: Tensor::new(vec![n, first.lookback, first.n_features()], x).expect("concat shape"),
            targets: Tensor::new(vec![n, first.target_len()], y).expect("concat shape"),
            lookback: first.lookback,
            feature_names: first.feature_names.clone(),
            stamps,
            provenance: Provenance {
                source: first.provenance.source.clone(),
                split: split.to_string(),
            },
        })
    }

    /// SHA-256 over shapes and little-endian values of inputs and targets.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in [&self.inputs, &self.targets] {
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Cuts windows of length `lookback` from every segment of `frame`.
///
/// Windows never cross a segment boundary, stride is one row. Next-step mode
/// needs at least `lookback + 1` rows in the frame and yields `len - L` windows per
/// segment; sequence mode yields `len - L + 1` windows per segment.
pub fn make_windows<T: Scalar>(frame: &SeriesFrame, lookback: usize, mode: WindowMode) -> Result<WindowedDataset<T>, DataError> {
    if lookback == 0 {
        return Err(DataError::Invalid("look-back must be at least 1".into()));
    }
    let min_rows = match mode {
        WindowMode::NextStep => lookback + 1,
        WindowMode::Sequence => lookback,
    };
    if frame.len() < min_rows {
        return Err(DataError::TooShort {
            rows: frame.len(),
            needed: min_rows,
        });
    }
    let target_idx = frame.target_index();
    let feature_idx: Vec<usize> = match mode {
        WindowMode::NextStep => (0..frame.n_columns()).collect(),
        WindowMode::Sequence => (0..frame.n_columns()).filter(|&c| c != target_idx).collect(),
    };
    if feature_idx.is_empty() {
        return Err(DataError::Invalid("no input columns left for windowing".into()));
    }
    let cols: Vec<Vec<f64>> = (0..frame.n_columns())
        .map(|c| frame.column_values(c))
        .collect::<Result<_, _>>()?;
    let ts = frame.timestamps();
    let f = feature_idx.len();

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut stamps = Vec::new();
    for (seg_id, seg) in frame.segment_ranges().into_iter().enumerate() {
        let len = seg.end - seg.start;
        let count = match mode {
            WindowMode::NextStep if len > lookback => len - lookback,
            WindowMode::Sequence if len >= lookback => len - lookback + 1,
            _ => 0,
        };
        for w in 0..count {
            let start = seg.start + w;
            let cols = &cols;
            x.extend((start..start + lookback).flat_map(|r| feature_idx.iter().map(move |&c| T::of(cols[c][r]))));
            let target = match mode {
                WindowMode::NextStep => {
                    y.push(T::of(cols[target_idx][start + lookback]));
                    Some(ts[start + lookback])
                }
                WindowMode::Sequence => {
                    y.extend(cols[target_idx][start..start + lookback].iter().map(|&v| T::of(v)));
                    None
                }
            };
            stamps.push(WindowStamp {
                input_start: ts[start],
                input_end: ts[start + lookback - 1],
                target,
                segment: seg_id as u32,
            });
        }
    }
    let n = stamps.len();
    if n == 0 {
        return Err(DataError::TooShort {
            rows: frame.len(),
            needed: min_rows,
        });
    }
    let o = match mode {
        WindowMode::NextStep => 1,
        WindowMode::Sequence => lookback,
    };
    WindowedDataset::new(
        Tensor::new(vec![n, lookback, f], x).expect("window tensor"),
        Tensor::new(vec![n, o], y).expect("target tensor"),
        feature_idx.iter().map(|&c| frame.column_name(c).to_string()).collect(),
        stamps,
        Provenance {
            source: frame.id().to_string(),
            split: "all".into(),
        },
    )
}
