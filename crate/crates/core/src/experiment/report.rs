use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ExperimentError};
use crate::attacks::{AttackKind, AttackStats, FeatureStats};
use crate::defenses::{DefenseTable, Measurement, BASELINE};
use crate::models::EpochRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub source: String,
    pub frame_id: String,
    pub frame_rows: usize,
    pub features: Vec<String>,
    pub target: String,
    pub lookback: usize,
    pub windows: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
    /// SHA-256 of the full windowed dataset.
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub k: usize,
    pub folds: Vec<FoldResult>,
    pub mean_train_rmse: f64,
    pub mean_val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanSection {
    pub checkpoint: String,
    pub cv: Option<CvSummary>,
    pub train_rmse: f64,
    pub val_rmse: f64,
    pub test_rmse: f64,
    pub history: Vec<EpochRecord>,
    /// `(true, predicted)` for the last output of every test window.
    pub test_predictions: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub attack: AttackKind,
    pub epsilon: f64,
    pub iterations: usize,
    pub clean_rmse: f64,
    pub attack_rmse: f64,
    pub percent_increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub attack: AttackKind,
    pub epsilon: f64,
    pub feature: String,
    pub clean: Vec<f64>,
    pub perturbed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSummary {
    pub attack: AttackKind,
    pub epsilon: f64,
    pub stats: AttackStats,
    pub per_feature: Vec<FeatureStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSection {
    pub checkpoint: String,
    pub grid: Vec<f64>,
    pub alpha: f64,
    pub rows: Vec<AttackRow>,
    pub perturbation: Vec<PerturbationSummary>,
    pub overlays: Vec<Overlay>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseSummary {
    pub defense: String,
    pub attack: AttackKind,
    pub checkpoint: String,
    pub train_rmse: f64,
    pub val_rmse: f64,
    pub test_clean_rmse: f64,
    pub skipped_batches: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseSection {
    pub baseline_checkpoint: String,
    pub grid: Vec<f64>,
    pub summaries: Vec<DefenseSummary>,
    pub measurements: Vec<Measurement>,
    pub table: DefenseTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lookback: usize,
    pub train_rmse: Option<f64>,
    pub val_rmse: Option<f64>,
    pub test_rmse: Option<f64>,
    pub checkpoint: Option<String>,
    pub dataset_hash: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything a run produced; persisted as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub name: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub dataset: Option<DatasetSummary>,
    pub complete: bool,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    /// Informational only; excluded from tables.
    pub timings: Vec<StageTiming>,
    /// Checkpoint name to SHA-256 id.
    pub checkpoints: BTreeMap<String, String>,
    pub clean: Option<CleanSection>,
    pub attacks: Option<AttackSection>,
    pub defenses: Option<DefenseSection>,
    pub sweep: Option<Vec<SweepPoint>>,
}

impl ExperimentReport {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            schema_version: super::SCHEMA_VERSION,
            name: config.name.clone(),
            config: config.clone(),
            config_hash: config.content_hash(),
            dataset: None,
            complete: false,
            failed_stage: None,
            error: None,
            timings: Vec::new(),
            checkpoints: BTreeMap::new(),
            clean: None,
            attacks: None,
            defenses: None,
            sweep: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    fn dataset_hash(&self) -> String {
        self.dataset.as_ref().map(|d| d.hash.clone()).unwrap_or_default()
    }
}

/// Header plus string cells, as written to and read from the CSV files.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parses one column as floats.
    pub fn floats(&self, name: &str) -> Result<Vec<f64>, ExperimentError> {
        let c = self
            .column(name)
            .ok_or_else(|| ExperimentError::Config(format!("no column {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[c].parse::<f64>()
                    .map_err(|e| ExperimentError::Config(format!("column {name}: {e}")))
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ExperimentError> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Self { header, rows })
    }
}

/// Shortest representation that parses back to the same float.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Result tables; each cell row carries the checkpoint id and dataset hash it came from.
pub fn report_tables(report: &ExperimentReport) -> BTreeMap<&'static str, CsvTable> {
    let mut out = BTreeMap::new();
    let hash = report.dataset_hash();
    if let Some(c) = &report.clean {
        let mut t = CsvTable::new(&["split", "rmse", "checkpoint", "dataset_hash"]);
        for (split, v) in [("train", c.train_rmse), ("validation", c.val_rmse), ("test", c.test_rmse)] {
            t.push(vec![split.into(), num(v), c.checkpoint.clone(), hash.clone()]);
        }
        out.insert("clean", t);
        if let Some(cv) = &c.cv {
            let mut t = CsvTable::new(&["fold", "train_windows", "val_windows", "train_rmse", "val_rmse"]);
            for f in &cv.folds {
                t.push(vec![
                    f.fold.to_string(),
                    f.train_windows.to_string(),
                    f.val_windows.to_string(),
                    num(f.train_rmse),
                    num(f.val_rmse),
                ]);
            }
            t.push(vec![
                "mean".into(),
                String::new(),
                String::new(),
                num(cv.mean_train_rmse),
                num(cv.mean_val_rmse),
            ]);
            out.insert("cv_folds", t);
        }
    }
    if let Some(a) = &report.attacks {
        let mut t = CsvTable::new(&[
            "attack",
            "epsilon",
            "iterations",
            "clean_rmse",
            "attack_rmse",
            "percent_increase",
            "checkpoint",
            "dataset_hash",
        ]);
        for r in &a.rows {
            t.push(vec![
                r.attack.label().into(),
                num(r.epsilon),
                r.iterations.to_string(),
                num(r.clean_rmse),
                num(r.attack_rmse),
                num(r.percent_increase),
                a.checkpoint.clone(),
                hash.clone(),
            ]);
        }
        out.insert("attacks", t);
        let mut t = CsvTable::new(&["attack", "epsilon", "feature", "max_linf", "mean_linf", "max_l2", "mean_l2"]);
        for p in &a.perturbation {
            for f in &p.per_feature {
                t.push(vec![
                    p.attack.label().into(),
                    num(p.epsilon),
                    f.feature.clone(),
                    num(f.max_linf),
                    num(f.mean_linf),
                    num(f.max_l2),
                    num(f.mean_l2),
                ]);
            }
        }
        out.insert("perturbation", t);
    }
    if let Some(d) = &report.defenses {
        let mut t = CsvTable::new(&[
            "attack",
            "training",
            "epsilon",
            "train_rmse",
            "val_rmse",
            "test_clean_rmse",
            "test_poisoned_rmse",
            "checkpoint",
            "dataset_hash",
        ]);
        for s in &d.summaries {
            for m in d
                .measurements
                .iter()
                .filter(|m| m.model == s.defense && m.attack == s.attack)
            {
                t.push(vec![
                    s.attack.label().into(),
                    s.defense.clone(),
                    num(m.epsilon),
                    num(s.train_rmse),
                    num(s.val_rmse),
                    num(s.test_clean_rmse),
                    num(m.rmse),
                    s.checkpoint.clone(),
                    hash.clone(),
                ]);
            }
        }
        out.insert("defense_rmse", t);
        let mut t = CsvTable::new(&[
            "attack",
            "training",
            "epsilon",
            "attack_rmse",
            "defended_rmse",
            "percent_decrease",
            "baseline_checkpoint",
            "checkpoint",
            "dataset_hash",
        ]);
        for r in &d.table.rows {
            let id = d
                .summaries
                .iter()
                .find(|s| s.defense == r.defense && s.attack == r.attack)
                .map(|s| s.checkpoint.clone())
                .unwrap_or_default();
            t.push(vec![
                r.attack.label().into(),
                r.defense.clone(),
                num(r.epsilon),
                num(r.attack_rmse),
                num(r.defended_rmse),
                num(r.percent_decrease),
                d.baseline_checkpoint.clone(),
                id,
                hash.clone(),
            ]);
        }
        out.insert("defense_decrease", t);
    }
    if let Some(sw) = &report.sweep {
        let mut t = CsvTable::new(&[
            "lookback",
            "train_rmse",
            "val_rmse",
            "test_rmse",
            "checkpoint",
            "dataset_hash",
            "error",
        ]);
        for p in sw {
            t.push(vec![
                p.lookback.to_string(),
                opt(p.train_rmse),
                opt(p.val_rmse),
                opt(p.test_rmse),
                p.checkpoint.clone().unwrap_or_default(),
                p.dataset_hash.clone().unwrap_or_default(),
                p.error.clone().unwrap_or_default(),
            ]);
        }
        out.insert("lookback", t);
    }
    out
}

/// Plot-ready series, one table per figure class.
pub fn plot_tables(report: &ExperimentReport) -> BTreeMap<&'static str, CsvTable> {
    let mut out = BTreeMap::new();
    if let Some(c) = &report.clean {
        let mut t = CsvTable::new(&["window", "true", "predicted"]);
        for (i, (y, p)) in c.test_predictions.iter().enumerate() {
            t.push(vec![i.to_string(), num(*y), num(*p)]);
        }
        out.insert("true_vs_predicted", t);
        let mut t = CsvTable::new(&["model", "epoch", "train_loss", "val_rmse"]);
        let mut add = |name: &str, h: &[EpochRecord]| {
            for r in h {
                t.push(vec![name.into(), r.epoch.to_string(), num(r.train_loss), opt(r.val_rmse)]);
            }
        };
        add(BASELINE, &c.history);
        if let Some(d) = &report.defenses {
            for s in &d.summaries {
                add(&format!("{}-{}", s.defense, s.attack.label()), &s.history);
            }
        }
        out.insert("loss_history", t);
    }
    if let Some(a) = &report.attacks {
        let mut t = CsvTable::new(&["attack", "epsilon", "rmse"]);
        for r in &a.rows {
            t.push(vec![r.attack.label().into(), num(r.epsilon), num(r.attack_rmse)]);
        }
        out.insert("rmse_vs_epsilon", t);
        let mut t = CsvTable::new(&["attack", "epsilon", "feature", "window", "clean", "perturbed"]);
        for o in &a.overlays {
            for (i, (c, p)) in o.clean.iter().zip(&o.perturbed).enumerate() {
                t.push(vec![
                    o.attack.label().into(),
                    num(o.epsilon),
                    o.feature.clone(),
                    i.to_string(),
                    num(*c),
                    num(*p),
                ]);
            }
        }
        out.insert("input_overlay", t);
    }
    if let Some(d) = &report.defenses {
        let mut t = CsvTable::new(&["attack", "epsilon", "model", "rmse"]);
        for m in &d.measurements {
            t.push(vec![m.attack.label().into(), num(m.epsilon), m.model.clone(), num(m.rmse)]);
        }
        out.insert("attack_vs_defense", t);
        let mut t = CsvTable::new(&["attack", "training", "epsilon", "percent_decrease"]);
        for r in &d.table.rows {
            t.push(vec![
                r.attack.label().into(),
                r.defense.clone(),
                num(r.epsilon),
                num(r.percent_decrease),
            ]);
        }
        out.insert("percent_decrease", t);
    }
    if let Some(sw) = &report.sweep {
        let mut t = CsvTable::new(&["lookback", "train_rmse", "test_rmse"]);
        for p in sw {
            t.push(vec![p.lookback.to_string(), opt(p.train_rmse), opt(p.test_rmse)]);
        }
        out.insert("rmse_vs_lookback", t);
    }
    out
}

fn write_all(dir: &Path, tables: &BTreeMap<&'static str, CsvTable>) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (name, t) in tables {
        let p = dir.join(format!("{name}.csv"));
        t.write(&p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Writes `tables/*.csv` under `out`.
pub fn write_tables(report: &ExperimentReport, out: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    write_all(&out.join("tables"), &report_tables(report))
}

/// Writes `plots/*.csv` under `out`.
pub fn emit_plot_data(report: &ExperimentReport, out: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    write_all(&out.join("plots"), &plot_tables(report))
}

/// Reads a table or plot file written by this module.
pub fn read_series(path: &Path) -> Result<CsvTable, ExperimentError> {
    CsvTable::read(path)
}
