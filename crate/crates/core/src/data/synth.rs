//! Synthetic stand-ins for the two datasets, deterministic in the seed.

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::electricity::ELECTRICITY_COLUMNS;
use super::frame::{Column, Segment, SeriesFrame};
use super::hdd::{DriveLog, DriveRow};
use super::DataError;
use crate::rng::Streams;

/// Periodic multivariate series shaped like daily household consumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeasonalParams {
    pub n_samples: usize,
    /// Samples per cycle; with zero noise `v(t) == v(t + period)` exactly.
    pub period: usize,
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub n_features: usize,
    pub start: NaiveDate,
}

impl Default for SeasonalParams {
    fn default() -> Self {
        Self {
            n_samples: 1400,
            period: 7,
            amplitude: 1.0,
            noise_sigma: 0.15,
            n_features: 7,
            start: NaiveDate::from_ymd_opt(2006, 12, 16).expect("valid date"),
        }
    }
}

/// Per-serial daily SMART logs that drift as the failure date approaches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationParams {
    pub n_serials: usize,
    /// Serials that never fail, added on top of `n_serials` failing ones.
    pub n_healthy: usize,
    pub min_days: usize,
    pub max_days: usize,
    pub n_features: usize,
    /// e-folding time (days) of the pre-failure drift.
    pub drift_days: f64,
    pub noise_sigma: f64,
    pub model: String,
    pub start: NaiveDate,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self {
            n_serials: 60,
            n_healthy: 0,
            min_days: 50,
            max_days: 90,
            n_features: 6,
            drift_days: 4.0,
            noise_sigma: 0.05,
            model: "ST4000DM000".into(),
            start: NaiveDate::from_ymd_opt(2016, 1, 1).expect("valid date"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SynthKind {
    Seasonal(SeasonalParams),
    Degradation(DegradationParams),
}

// Loadings on the shared load cycle, giving electricity-like correlation structure.
const ELEC_LOADING: [f64; 7] = [1.0, 0.15, -0.2, 0.97, 0.75, 0.25, 0.85];
const ELEC_OFFSET: [f64; 7] = [1.1, 0.12, 240.0, 4.6, 1.1, 1.3, 6.4];
const ELEC_SCALE: [f64; 7] = [1.0, 0.1, 3.0, 4.2, 1.0, 1.0, 5.0];

const SMART_IDS: [u32; 10] = [5, 187, 188, 197, 198, 9, 194, 12, 1, 7];

fn load_cycle(phase: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    (tau * phase).sin() + 0.5 * (2.0 * tau * phase + 1.0).sin()
}

fn seasonal(p: &SeasonalParams, seed: u64) -> Result<SeriesFrame, DataError> {
    if p.n_samples < 2 || p.period == 0 || p.n_features == 0 || !(p.noise_sigma >= 0.0) || !p.amplitude.is_finite() {
        return Err(DataError::Invalid(format!("invalid seasonal parameters {p:?}")));
    }
    let mut rng = Streams::new(seed).stream("synth/seasonal");
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let elec = p.n_features == ELECTRICITY_COLUMNS.len();
    let names: Vec<String> = if elec {
        ELECTRICITY_COLUMNS.iter().map(|s| s.to_string()).collect()
    } else {
        (0..p.n_features).map(|k| format!("f{k}")).collect()
    };
    let (loading, offset, scale): (Vec<f64>, Vec<f64>, Vec<f64>) = if elec {
        (ELEC_LOADING.to_vec(), ELEC_OFFSET.to_vec(), ELEC_SCALE.to_vec())
    } else {
        (
            (0..p.n_features).map(|k| 1.0 / (1.0 + k as f64)).collect(),
            vec![0.0; p.n_features],
            vec![1.0; p.n_features],
        )
    };
    let phases: Vec<f64> = (0..p.n_features).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
    let mut cols = vec![Vec::with_capacity(p.n_samples); p.n_features];
    for t in 0..p.n_samples {
        let phase = (t % p.period) as f64 / p.period as f64;
        let s = load_cycle(phase);
        for k in 0..p.n_features {
            let w = loading[k];
            let harmonic = (3 + k) as f64;
            let u = (std::f64::consts::TAU * harmonic * phase + phases[k]).sin();
            let clean = w * s + (1.0 - w.abs()) * u;
            let eps = if p.noise_sigma > 0.0 {
                p.noise_sigma * noise.sample(&mut rng)
            } else {
                0.0
            };
            cols[k].push(offset[k] + scale[k] * p.amplitude * (clean + eps));
        }
    }
    let start = p.start.and_hms_opt(0, 0, 0).expect("midnight");
    let ts = (0..p.n_samples).map(|t| start + Duration::days(t as i64)).collect();
    let target = names[0].clone();
    let columns = names.into_iter().zip(cols).map(|(n, v)| Column::dense(n, v)).collect();
    SeriesFrame::new(format!("synthetic-seasonal-{seed}"), ts, columns, &target)
}

/// Synthetic drive log: every failing serial fails on its last logged day.
pub fn synth_drive_log(p: &DegradationParams, seed: u64) -> Result<DriveLog, DataError> {
    if p.n_serials + p.n_healthy == 0
        || p.min_days < 2
        || p.max_days < p.min_days
        || p.n_features == 0
        || p.n_features > SMART_IDS.len()
        || !(p.drift_days > 0.0)
        || !(p.noise_sigma >= 0.0)
    {
        return Err(DataError::Invalid(format!("invalid degradation parameters {p:?}")));
    }
    let streams = Streams::new(seed);
    let mut rng = streams.stream("synth/degradation");
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let bases: Vec<f64> = (0..p.n_features).map(|_| rng.random_range(10.0..100.0)).collect();
    let slopes: Vec<f64> = (0..p.n_features)
        .map(|k| if k % 2 == 0 { 1.0 } else { -0.6 } * rng.random_range(20.0..60.0))
        .collect();
    let columns: Vec<String> = SMART_IDS[..p.n_features].iter().map(|id| format!("smart_{id}_raw")).collect();
    let mut rows = Vec::new();
    for s in 0..p.n_serials + p.n_healthy {
        let fails = s < p.n_serials;
        let days = rng.random_range(p.min_days..=p.max_days);
        let offset = rng.random_range(0..30) as i64;
        let serial = format!("SYN{s:05}");
        for d in 0..days {
            let to_failure = (days - 1 - d) as f64;
            let drift = if fails { (-to_failure / p.drift_days).exp() } else { 0.0 };
            let smart = (0..p.n_features)
                .map(|k| {
                    let e = p.noise_sigma * noise.sample(&mut rng);
                    Some(bases[k] + slopes[k] * drift + bases[k] * e)
                })
                .collect();
            rows.push(DriveRow {
                date: p.start + Duration::days(offset + d as i64),
                serial: serial.clone(),
                model: p.model.clone(),
                capacity_bytes: 4_000_787_030_016,
                failure: fails && d + 1 == days,
                smart,
            });
        }
    }
    Ok(DriveLog::new(columns, rows))
}

fn drive_log_frame(log: &DriveLog, id: String) -> Result<SeriesFrame, DataError> {
    let mut segments: Vec<Segment> = Vec::new();
    for (i, r) in log.rows.iter().enumerate() {
        match segments.last_mut() {
            Some(s) if s.name == r.serial => s.rows.end = i + 1,
            _ => segments.push(Segment {
                name: r.serial.clone(),
                rows: i..i + 1,
            }),
        }
    }
    let mut columns: Vec<Column> = log
        .smart_columns
        .iter()
        .enumerate()
        .map(|(c, n)| Column::new(n.clone(), log.rows.iter().map(|r| r.smart[c]).collect()))
        .collect();
    columns.push(Column::dense(
        "failure",
        log.rows.iter().map(|r| f64::from(u8::from(r.failure))).collect(),
    ));
    let ts = log.rows.iter().map(|r| r.date.and_hms_opt(0, 0, 0).expect("midnight")).collect();
    SeriesFrame::with_segments(id, ts, columns, "failure", segments)
}

/// Generates a synthetic frame. Degradation frames carry one segment per serial
/// and a `failure` target column; use [`synth_drive_log`] for the raw log.
pub fn synth_series(kind: &SynthKind, seed: u64) -> Result<SeriesFrame, DataError> {
    match kind {
        SynthKind::Seasonal(p) => seasonal(p, seed),
        SynthKind::Degradation(p) => drive_log_frame(&synth_drive_log(p, seed)?, format!("synthetic-degradation-{seed}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_seasonal_is_periodic() {
        let p = SeasonalParams {
            noise_sigma: 0.0,
            n_samples: 60,
            period: 12,
            ..SeasonalParams::default()
        };
        let f = synth_series(&SynthKind::Seasonal(p), 3).unwrap();
        for c in 0..f.n_columns() {
            let v = f.column_values(c).unwrap();
            for t in 0..48 {
                assert_eq!(v[t], v[t + 12]);
            }
        }
    }

    #[test]
    fn three_serials_three_failures() {
        let p = DegradationParams {
            n_serials: 3,
            ..DegradationParams::default()
        };
        let f = synth_series(&SynthKind::Degradation(p), 1).unwrap();
        let failures = f.column_values(f.target_index()).unwrap();
        assert_eq!(failures.iter().filter(|&&v| v == 1.0).count(), 3);
        assert_eq!(f.segments().len(), 3);
    }

    #[test]
    fn same_seed_same_frame() {
        let k = SynthKind::Seasonal(SeasonalParams::default());
        assert_eq!(synth_series(&k, 9).unwrap(), synth_series(&k, 9).unwrap());
        assert_ne!(synth_series(&k, 9).unwrap(), synth_series(&k, 10).unwrap());
        let d = SynthKind::Degradation(DegradationParams::default());
        assert_eq!(synth_series(&d, 9).unwrap(), synth_series(&d, 9).unwrap());
    }

    #[test]
    fn invalid_params_rejected() {
        let p = SeasonalParams {
            period: 0,
            ..SeasonalParams::default()
        };
        assert!(synth_series(&SynthKind::Seasonal(p), 0).is_err());
        let d = DegradationParams {
            min_days: 10,
            max_days: 5,
            ..DegradationParams::default()
        };
        assert!(synth_drive_log(&d, 0).is_err());
    }
}
