use serde::{Deserialize, Serialize};

use super::frame::SeriesFrame;
use super::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.values[i][j])
    }
}

/// Pearson correlation between every pair of columns.
///
/// A zero-variance column correlates 0 with everything else (with a warning);
/// the diagonal is exactly 1.
pub fn correlation_matrix(frame: &SeriesFrame) -> Result<CorrelationMatrix, DataError> {
    if frame.len() < 2 {
        return Err(DataError::TooShort {
            rows: frame.len(),
            needed: 2,
        });
    }
    let cols: Vec<Vec<f64>> = (0..frame.n_columns())
        .map(|c| frame.column_values(c))
        .collect::<Result<_, _>>()?;
    let n = frame.len() as f64;
    let centered: Vec<(Vec<f64>, f64)> = cols
        .iter()
        .zip(frame.columns())
        .map(|(c, col)| {
            let mean = c.iter().sum::<f64>() / n;
            let d: Vec<f64> = c.iter().map(|v| v - mean).collect();
            let ss = d.iter().map(|x| x * x).sum::<f64>();
            if ss == 0.0 {
                log::warn!("column {} has zero variance; correlations set to 0", col.name);
            }
            (d, ss.sqrt())
        })
        .collect();
    let f = cols.len();
    let mut values = vec![vec![0.0; f]; f];
    for i in 0..f {
        values[i][i] = 1.0;
        for j in i + 1..f {
            let (di, si) = &centered[i];
            let (dj, sj) = &centered[j];
            let r = if *si == 0.0 || *sj == 0.0 {
                0.0
            } else {
                let cov: f64 = di.iter().zip(dj).map(|(a, b)| a * b).sum();
                (cov / (si * sj)).clamp(-1.0, 1.0)
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: frame.column_names(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSelection {
    /// Keep the `m` columns with the largest |corr| against the target (the target ranks first).
    TopM(usize),
    /// Keep every column with |corr| against the target at least this large.
    Threshold(f64),
}

/// Column subset chosen by absolute correlation with the target, in original column order.
pub fn select_features(frame: &SeriesFrame, selection: FeatureSelection) -> Result<SeriesFrame, DataError> {
    let corr = correlation_matrix(frame)?;
    let t = frame.target_index();
    let mut ranked: Vec<(usize, f64)> = (0..frame.n_columns()).map(|c| (c, corr.values[t][c].abs())).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut keep: Vec<usize> = match selection {
        FeatureSelection::TopM(m) => {
            if m == 0 {
                return Err(DataError::Invalid("top-m selection needs m >= 1".into()));
            }
            ranked.iter().take(m).map(|(c, _)| *c).collect()
        }
        FeatureSelection::Threshold(th) => ranked.iter().filter(|(_, r)| *r >= th).map(|(c, _)| *c).collect(),
    };
    if !keep.contains(&t) {
        keep.push(t);
    }
    keep.sort_unstable();
    let names: Vec<String> = keep.iter().map(|&c| frame.column_name(c).to_string()).collect();
    frame.select_columns(&names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Column;
    use chrono::NaiveDate;

    fn frame(cols: Vec<(&str, Vec<f64>)>) -> SeriesFrame {
        let n = cols[0].1.len();
        let ts = (0..n)
            .map(|i| {
                NaiveDate::from_ymd_opt(2010, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
                    + chrono::Duration::days(i as i64)
            })
            .collect();
        let target = cols[0].0.to_string();
        SeriesFrame::new("c", ts, cols.into_iter().map(|(n, v)| Column::dense(n, v)).collect(), &target).unwrap()
    }

    #[test]
    fn self_and_negated() {
        let x = vec![1.0, 2.0, 4.0, 3.0];
        let f = frame(vec![("x", x.clone()), ("neg", x.iter().map(|v| -v).collect()), ("c", vec![5.0; 4])]);
        let m = correlation_matrix(&f).unwrap();
        assert_eq!(m.get("x", "x"), Some(1.0));
        assert!((m.get("x", "neg").unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(m.get("x", "c"), Some(0.0));
        assert_eq!(m.get("c", "c"), Some(1.0));
    }

    #[test]
    fn top_m_keeps_target_and_order() {
        let f = frame(vec![
            ("y", vec![1.0, 2.0, 3.0, 4.0, 5.0]),
            ("noise", vec![1.0, -1.0, 1.0, -1.0, 1.0]),
            ("close", vec![1.1, 2.0, 2.9, 4.2, 5.0]),
        ]);
        let s = select_features(&f, FeatureSelection::TopM(2)).unwrap();
        assert_eq!(s.column_names(), vec!["y", "close"]);
        assert_eq!(s.target_name(), "y");
        let t = select_features(&f, FeatureSelection::Threshold(0.99)).unwrap();
        assert_eq!(t.column_names(), vec!["y", "close"]);
    }
}
