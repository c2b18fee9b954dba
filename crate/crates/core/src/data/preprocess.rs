use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::frame::{Column, NormParams, SeriesFrame};
use super::DataError;

/// Replaces each missing cell with the mean of its column's observed values.
pub fn impute_column_mean(frame: &SeriesFrame) -> Result<SeriesFrame, DataError> {
    let mut columns = Vec::with_capacity(frame.n_columns());
    for c in frame.columns() {
        let observed: Vec<f64> = c.values.iter().flatten().copied().collect();
        if observed.is_empty() {
            return Err(DataError::AllMissing(c.name.clone()));
        }
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        let values = c.values.iter().map(|v| Some(v.unwrap_or(mean))).collect();
        columns.push(Column::new(c.name.clone(), values));
    }
    Ok(frame.replace_columns(columns, frame.norm_params().to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

/// One row per calendar day holding the mean (or sum) of that day's observed values.
///
/// Days present in the input appear in the output; a cell whose day has no
/// observed value for that column stays missing.
pub fn resample_daily(frame: &SeriesFrame, agg: Aggregation) -> Result<SeriesFrame, DataError> {
    let ts = frame.timestamps();
    let mut days: Vec<NaiveDateTime> = Vec::new();
    let mut bounds: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for r in 1..=ts.len() {
        if r == ts.len() || ts[r].date() != ts[start].date() {
            days.push(ts[start].date().and_hms_opt(0, 0, 0).expect("midnight"));
            bounds.push((start, r));
            start = r;
        }
    }
    let columns = frame
        .columns()
        .iter()
        .map(|c| {
            let values = bounds
                .iter()
                .map(|&(a, b)| {
                    let obs: Vec<f64> = c.values[a..b].iter().flatten().copied().collect();
                    if obs.is_empty() {
                        return None;
                    }
                    let s: f64 = obs.iter().sum();
                    Some(match agg {
                        Aggregation::Mean => s / obs.len() as f64,
                        Aggregation::Sum => s,
                    })
                })
                .collect();
            Column::new(c.name.clone(), values)
        })
        .collect();
    SeriesFrame::new(format!("{}@daily", frame.id()), days, columns, frame.target_name())
}

fn normalize_impl(frame: &SeriesFrame, lo: f64, hi: f64, skip_target: bool) -> Result<SeriesFrame, DataError> {
    if !(hi > lo) {
        return Err(DataError::Invalid(format!("normalization range [{lo}, {hi}] is empty")));
    }
    let mut columns = Vec::with_capacity(frame.n_columns());
    let mut norm = frame.norm_params().to_vec();
    for (i, c) in frame.columns().iter().enumerate() {
        if skip_target && i == frame.target_index() {
            columns.push(c.clone());
            continue;
        }
        let observed = c.values.iter().flatten();
        let min = observed.clone().copied().fold(f64::INFINITY, f64::min);
        let max = observed.copied().fold(f64::NEG_INFINITY, f64::max);
        if !min.is_finite() {
            return Err(DataError::AllMissing(c.name.clone()));
        }
        if max == min {
            log::warn!("column {} is constant ({min}); mapped to {lo}", c.name);
        }
        let p = NormParams { min, max, lo, hi };
        columns.push(Column::new(c.name.clone(), c.values.iter().map(|v| v.map(|x| p.apply(x))).collect()));
        norm[i] = Some(p);
    }
    Ok(frame.replace_columns(columns, norm))
}

/// Min-max scales every column into `[lo, hi]`; constant columns map to `lo`.
pub fn minmax_normalize(frame: &SeriesFrame, lo: f64, hi: f64) -> Result<SeriesFrame, DataError> {
    normalize_impl(frame, lo, hi, false)
}

/// Like [`minmax_normalize`] but leaves the target column in its original units.
pub fn minmax_normalize_features(frame: &SeriesFrame, lo: f64, hi: f64) -> Result<SeriesFrame, DataError> {
    normalize_impl(frame, lo, hi, true)
}

/// Inverts the stored normalization of every column that has one.
pub fn denormalize(frame: &SeriesFrame) -> SeriesFrame {
    let columns = frame
        .columns()
        .iter()
        .zip(frame.norm_params())
        .map(|(c, p)| match p {
            Some(p) => Column::new(c.name.clone(), c.values.iter().map(|v| v.map(|x| p.invert(x))).collect()),
            None => c.clone(),
        })
        .collect();
    frame.replace_columns(columns, vec![None; frame.n_columns()])
}
