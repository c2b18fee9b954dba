//! Drive-stats logs in the Backblaze daily CSV schema and RUL labeling.
//!
//! Columns: `date` (YYYY-MM-DD), `serial_number`, `model`, `capacity_bytes`,
//! `failure` (0/1), then any number of `smart_N_normalized` / `smart_N_raw`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::frame::{Column, Segment, SeriesFrame};
use super::preprocess::minmax_normalize_features;
use super::DataError;

const FIXED: [&str; 5] = ["date", "serial_number", "model", "capacity_bytes", "failure"];

#[derive(Debug, Clone, PartialEq)]
pub struct DriveRow {
    pub date: NaiveDate,
    pub serial: String,
    pub model: String,
    pub capacity_bytes: i64,
    pub failure: bool,
    /// Aligned with [`DriveLog::smart_columns`].
    pub smart: Vec<Option<f64>>,
}

/// Daily drive records sorted by serial, then date.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DriveLog {
    pub smart_columns: Vec<String>,
    pub rows: Vec<DriveRow>,
}

impl DriveLog {
    pub fn new(smart_columns: Vec<String>, mut rows: Vec<DriveRow>) -> Self {
        rows.sort_by(|a, b| a.serial.cmp(&b.serial).then(a.date.cmp(&b.date)));
        Self { smart_columns, rows }
    }

    pub fn serials(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if out.last() != Some(&r.serial.as_str()) {
                out.push(&r.serial);
            }
        }
        out
    }

    fn merge(&mut self, other: DriveLog) {
        let mut index: HashMap<String, usize> =
            self.smart_columns.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        for c in &other.smart_columns {
            if !index.contains_key(c) {
                index.insert(c.clone(), self.smart_columns.len());
                self.smart_columns.push(c.clone());
            }
        }
        let width = self.smart_columns.len();
        for r in &mut self.rows {
            r.smart.resize(width, None);
        }
        for mut r in other.rows {
            let mut smart = vec![None; width];
            for (c, v) in other.smart_columns.iter().zip(r.smart.drain(..)) {
                smart[index[c]] = v;
            }
            r.smart = smart;
            self.rows.push(r);
        }
        self.rows
            .sort_by(|a, b| a.serial.cmp(&b.serial).then(a.date.cmp(&b.date)));
    }
}

/// Reads one daily CSV, keeping only rows whose model equals `model` (if given).
pub fn read_backblaze_csv(path: impl AsRef<Path>, model: Option<&str>) -> Result<DriveLog, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let pos = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    };
    let idx: Vec<usize> = FIXED.iter().map(|n| pos(n)).collect::<Result<_, _>>()?;
    let smart_idx: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.trim().starts_with("smart_"))
        .map(|(i, _)| i)
        .collect();
    let smart_columns = smart_idx.iter().map(|&i| headers[i].trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
        let field = |k: usize| record.get(idx[k]).unwrap_or("").trim();
        if let Some(m) = model {
            if field(2) != m {
                continue;
            }
        }
        let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d").map_err(|e| DataError::Parse {
            line,
            message: format!("bad date {:?}: {e}", field(0)),
        })?;
        let capacity_bytes = field(3).parse().map_err(|_| DataError::Parse {
            line,
            message: format!("bad capacity {:?}", field(3)),
        })?;
        let failure = match field(4) {
            "0" => false,
            "1" => true,
            other => {
                return Err(DataError::Parse {
                    line,
                    message: format!("failure must be 0 or 1, got {other:?}"),
                })
            }
        };
        let smart = smart_idx
            .iter()
            .map(|&i| {
                let s = record.get(i).unwrap_or("").trim();
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>().map(Some).map_err(|_| DataError::Parse {
                        line,
                        message: format!("bad SMART value {s:?} in {}", &headers[i]),
                    })
                }
            })
            .collect::<Result<_, _>>()?;
        rows.push(DriveRow {
            date,
            serial: field(1).to_string(),
            model: field(2).to_string(),
            capacity_bytes,
            failure,
            smart,
        });
    }
    Ok(DriveLog::new(smart_columns, rows))
}

/// Reads every `*.csv` in `dir` (sorted by file name) and merges them.
pub fn read_backblaze_dir(dir: impl AsRef<Path>, model: Option<&str>) -> Result<DriveLog, DataError> {
    let mut files: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(DataError::Empty);
    }
    let mut log = DriveLog::default();
    for f in files {
        log.merge(read_backblaze_csv(&f, model)?);
    }
    if log.rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(log)
}

pub fn write_backblaze_csv(log: &DriveLog, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    write!(out, "{}", FIXED.join(","))?;
    for c in &log.smart_columns {
        write!(out, ",{c}")?;
    }
    writeln!(out)?;
    for r in &log.rows {
        write!(
            out,
            "{},{},{},{},{}",
            r.date.format("%Y-%m-%d"),
            r.serial,
            r.model,
            r.capacity_bytes,
            u8::from(r.failure)
        )?;
        for v in &r.smart {
            match v {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RulLabel {
    pub serial: String,
    pub date: NaiveDate,
    pub rul: u32,
    pub horizon: u32,
}

fn failure_dates(log: &DriveLog) -> Result<BTreeMap<&str, NaiveDate>, DataError> {
    let mut failures: BTreeMap<&str, Vec<NaiveDate>> = BTreeMap::new();
    for r in log.rows.iter().filter(|r| r.failure) {
        failures.entry(r.serial.as_str()).or_default().push(r.date);
    }
    failures
        .into_iter()
        .map(|(s, d)| {
            if d.len() > 1 {
                Err(DataError::MultipleFailures {
                    serial: s.to_string(),
                    count: d.len(),
                })
            } else {
                Ok((s, d[0]))
            }
        })
        .collect()
}

/// Labels the last `horizon` days before each failure with RUL `horizon..1`.
///
/// RUL is the number of days between the row date and the failure date, so the
/// day before failure is 1. Rows on or after the failure date, rows further
/// than `horizon` days out, and serials that never fail are not labeled.
pub fn label_rul(log: &DriveLog, horizon: u32) -> Result<Vec<RulLabel>, DataError> {
    if horizon == 0 {
        return Err(DataError::Invalid("RUL horizon must be positive".into()));
    }
    let failures = failure_dates(log)?;
    let mut out = Vec::new();
    for r in &log.rows {
        let Some(&fail) = failures.get(r.serial.as_str()) else { continue };
        let days = (fail - r.date).num_days();
        if days >= 1 && days <= i64::from(horizon) {
            out.push(RulLabel {
                serial: r.serial.clone(),
                date: r.date,
                rul: days as u32,
                horizon,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RulFrameOptions {
    pub horizon: u32,
    /// Keep SMART columns observed in at least this fraction of labeled rows.
    pub min_coverage: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for RulFrameOptions {
    fn default() -> Self {
        Self {
            horizon: 5,
            min_coverage: 0.99,
            lo: 0.0,
            hi: 255.0,
        }
    }
}

/// Labeled rows as a frame with one segment per serial and target column `rul`.
///
/// Columns below the coverage threshold are dropped, then rows with any
/// remaining gap; SMART features are min-max scaled to `[lo, hi]`.
pub fn build_rul_frame(log: &DriveLog, opts: &RulFrameOptions) -> Result<SeriesFrame, DataError> {
    let labels = label_rul(log, opts.horizon)?;
    if labels.is_empty() {
        return Err(DataError::Empty);
    }
    let by_key: HashMap<(&str, NaiveDate), u32> =
        labels.iter().map(|l| ((l.serial.as_str(), l.date), l.rul)).collect();
    let labeled: Vec<&DriveRow> = log
        .rows
        .iter()
        .filter(|r| by_key.contains_key(&(r.serial.as_str(), r.date)))
        .collect();
    let keep: Vec<usize> = (0..log.smart_columns.len())
        .filter(|&c| {
            let seen = labeled.iter().filter(|r| r.smart[c].is_some()).count();
            seen as f64 >= opts.min_coverage * labeled.len() as f64 && seen > 0
        })
        .collect();
    if keep.is_empty() {
        return Err(DataError::Invalid("no SMART column reaches the coverage threshold".into()));
    }
    let rows: Vec<&DriveRow> = labeled
        .into_iter()
        .filter(|r| keep.iter().all(|&c| r.smart[c].is_some()))
        .collect();
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    let mut segments: Vec<Segment> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        match segments.last_mut() {
            Some(s) if s.name == r.serial => s.rows.end = i + 1,
            _ => segments.push(Segment {
                name: r.serial.clone(),
                rows: i..i + 1,
            }),
        }
    }
    let mut columns: Vec<Column> = keep
        .iter()
        .map(|&c| Column::new(log.smart_columns[c].clone(), rows.iter().map(|r| r.smart[c]).collect()))
        .collect();
    columns.push(Column::dense(
        "rul",
        rows.iter()
            .map(|r| f64::from(by_key[&(r.serial.as_str(), r.date)]))
            .collect(),
    ));
    let ts = rows
        .iter()
        .map(|r| r.date.and_hms_opt(0, 0, 0).expect("midnight"))
        .collect();
    let frame = SeriesFrame::with_segments(format!("hdd-rul{}", opts.horizon), ts, columns, "rul", segments)?;
    minmax_normalize_features(&frame, opts.lo, opts.hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(serial: &str, day: u32, failure: bool) -> DriveRow {
        DriveRow {
            date: NaiveDate::from_ymd_opt(2016, 1, day).unwrap(),
            serial: serial.into(),
            model: "ST4000DM000".into(),
            capacity_bytes: 4_000_787_030_016,
            failure,
            smart: vec![Some(f64::from(day))],
        }
    }

    fn log(rows: Vec<DriveRow>) -> DriveLog {
        DriveLog::new(vec!["smart_5_raw".into()], rows)
    }

    #[test]
    fn last_days_before_failure() {
        let rows = (1..=10).map(|d| row("A", d, d == 10)).collect();
        let labels = label_rul(&log(rows), 5).unwrap();
        let got: Vec<(u32, u32)> = labels.iter().map(|l| (l.date.format("%d").to_string().parse().unwrap(), l.rul)).collect();
        assert_eq!(got, vec![(5, 5), (6, 4), (7, 3), (8, 2), (9, 1)]);
    }

    #[test]
    fn healthy_serial_is_unlabeled() {
        let rows = (1..=10).map(|d| row("B", d, false)).collect();
        assert!(label_rul(&log(rows), 5).unwrap().is_empty());
    }

    #[test]
    fn double_failure_is_rejected() {
        let rows = vec![row("C", 1, true), row("C", 2, true)];
        assert!(matches!(
            label_rul(&log(rows), 5),
            Err(DataError::MultipleFailures { serial, count: 2 }) if serial == "C"
        ));
    }

    #[test]
    fn rul_frame_segments_per_serial() {
        let mut rows: Vec<DriveRow> = (1..=10).map(|d| row("A", d, d == 10)).collect();
        rows.extend((1..=8).map(|d| row("B", d, d == 8)));
        let f = build_rul_frame(&log(rows), &RulFrameOptions::default()).unwrap();
        assert_eq!(f.segments().len(), 2);
        assert_eq!(f.len(), 10);
        let rul = f.column_values(f.target_index()).unwrap();
        assert_eq!(rul, vec![5.0, 4.0, 3.0, 2.0, 1.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        let smart = f.column_values(0).unwrap();
        assert!(smart.iter().all(|v| (0.0..=255.0).contains(v)));
    }

    #[test]
    fn csv_round_trip_with_model_filter() {
        let mut rows: Vec<DriveRow> = (1..=3).map(|d| row("A", d, d == 3)).collect();
        let mut other = row("Z", 1, false);
        other.model = "HGST".into();
        other.smart = vec![None];
        rows.push(other);
        let l = log(rows);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_backblaze_csv(&l, f.path()).unwrap();
        let all = read_backblaze_csv(f.path(), None).unwrap();
        assert_eq!(all, l);
        let st = read_backblaze_csv(f.path(), Some("ST4000DM000")).unwrap();
        assert_eq!(st.rows.len(), 3);
    }
}
