//! Household power consumption file: `;`-delimited, `?` for missing values,
//! `Date` as `dd/mm/yyyy` and `Time` as `hh:mm:ss`, then seven numeric columns.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};

use super::frame::{Column, SeriesFrame};
use super::DataError;

pub const ELECTRICITY_COLUMNS: [&str; 7] = [
    "Global_active_power",
    "Global_reactive_power",
    "Voltage",
    "Global_intensity",
    "Sub_metering_1",
    "Sub_metering_2",
    "Sub_metering_3",
];

pub const ELECTRICITY_TARGET: &str = "Global_active_power";

const MISSING: &str = "?";

pub fn load_electricity(path: impl AsRef<Path>) -> Result<SeriesFrame, DataError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b';')
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let expected = 2 + ELECTRICITY_COLUMNS.len();
    let mut timestamps = Vec::new();
    let mut values: Vec<Vec<Option<f64>>> = vec![Vec::new(); ELECTRICITY_COLUMNS.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        if i == 0 && record.get(0).map(|s| s.trim()) == Some("Date") {
            if record.len() != expected {
                return Err(DataError::ColumnCount {
                    line,
                    expected,
                    found: record.len(),
                });
            }
            continue;
        }
        if record.len() == 1 && record.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if record.len() != expected {
            return Err(DataError::ColumnCount {
                line,
                expected,
                found: record.len(),
            });
        }
        let date = NaiveDate::parse_from_str(record[0].trim(), "%d/%m/%Y").map_err(|e| DataError::Parse {
            line,
            message: format!("bad date {:?}: {e}", &record[0]),
        })?;
        let time = NaiveTime::parse_from_str(record[1].trim(), "%H:%M:%S").map_err(|e| DataError::Parse {
            line,
            message: format!("bad time {:?}: {e}", &record[1]),
        })?;
        timestamps.push(NaiveDateTime::new(date, time));
        for (c, field) in record.iter().skip(2).enumerate() {
            let field = field.trim();
            let v = if field == MISSING || field.is_empty() {
                None
            } else {
                let x: f64 = field.parse().map_err(|_| DataError::Parse {
                    line,
                    message: format!("bad number {field:?} in column {}", ELECTRICITY_COLUMNS[c]),
                })?;
                if !x.is_finite() {
                    return Err(DataError::Parse {
                        line,
                        message: format!("non-finite value {field:?}"),
                    });
                }
                Some(x)
            };
            values[c].push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(DataError::Empty);
    }
    let columns = ELECTRICITY_COLUMNS
        .iter()
        .zip(values)
        .map(|(n, v)| Column::new(*n, v))
        .collect();
    let id = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    SeriesFrame::new(id, timestamps, columns, ELECTRICITY_TARGET)
}

/// Writes any frame in the same dialect (header row included).
pub fn write_electricity_csv(frame: &SeriesFrame, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    write!(out, "Date;Time")?;
    for c in frame.columns() {
        write!(out, ";{}", c.name)?;
    }
    writeln!(out)?;
    for (r, ts) in frame.timestamps().iter().enumerate() {
        write!(out, "{};{}", ts.format("%d/%m/%Y"), ts.format("%H:%M:%S"))?;
        for c in frame.columns() {
            match c.values[r] {
                Some(v) => write!(out, ";{v}")?,
                None => write!(out, ";{MISSING}")?,
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
