use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::{
    emit_plot_data, write_tables, AttackRow, AttackSection, CleanSection, CvSummary, DatasetSummary, DefenseSection,
    DefenseSummary, ExperimentReport, FoldResult, Overlay, PerturbationSummary, StageTiming, SweepPoint,
};
use super::{DatasetConfig, ExperimentConfig, ExperimentError};
use crate::attacks::{attack_dataset, imperceptibility_report, overlay_series, write_adversarial_batch, AttackConfig, AttackStats};
use crate::data::{
    build_rul_frame, impute_column_mean, make_windows, minmax_normalize, read_backblaze_dir, resample_daily,
    select_features, synth_drive_log, synth_series, train_val_test_split, walk_forward_splits, RulFrameOptions,
    SeriesFrame, SplitRanges, SynthKind, WindowMode, WindowedDataset,
};
use crate::defenses::{daat_train, defense_report, lpat_train, percent_increase, DefenseTable, BASELINE};
use crate::models::{
    evaluate, load_checkpoint, predict, save_checkpoint, train, Architecture, EpochRecord, ForecastModel, ModelKind,
    TrainConfig,
};
use crate::rng::Streams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Train,
    Attack,
    Defend,
    Sweep,
    Report,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Attack => "attack",
            Self::Defend => "defend",
            Self::Sweep => "sweep",
            Self::Report => "report",
            Self::All => "all",
        }
    }
}

/// Windowed data and its temporal split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub frame: SeriesFrame,
    pub windows: WindowedDataset<f64>,
    pub split: SplitRanges,
    pub train: WindowedDataset<f64>,
    pub val: WindowedDataset<f64>,
    pub test: WindowedDataset<f64>,
    pub summary: DatasetSummary,
}

fn build_frame(cfg: &ExperimentConfig) -> Result<SeriesFrame, ExperimentError> {
    let pre = &cfg.preprocess;
    let rul_opts = |horizon: Option<u32>| {
        let (lo, hi) = pre.normalize.unwrap_or((0.0, 255.0));
        RulFrameOptions {
            horizon: horizon.unwrap_or(cfg.model.lookback as u32),
            min_coverage: pre.min_coverage,
            lo,
            hi,
        }
    };
    let finish = |mut f: SeriesFrame| -> Result<SeriesFrame, ExperimentError> {
        if let Some(sel) = pre.select_features {
            f = select_features(&f, sel)?;
        }
        let (lo, hi) = pre.normalize.unwrap_or((0.0, 1.0));
        Ok(minmax_normalize(&f, lo, hi)?)
    };
    match &cfg.dataset {
        DatasetConfig::Electricity { path } => {
            let mut f = crate::data::load_electricity(path)?;
            if pre.impute {
                f = impute_column_mean(&f)?;
            }
            if let Some(agg) = pre.resample {
                f = resample_daily(&f, agg)?;
            }
            if f.missing_count() > 0 {
                f = impute_column_mean(&f)?;
            }
            finish(f)
        }
        DatasetConfig::Hdd {
            dir,
            drive_model,
            horizon,
        } => {
            let log = read_backblaze_dir(dir, Some(drive_model))?;
            Ok(build_rul_frame(&log, &rul_opts(*horizon))?)
        }
        DatasetConfig::Synthetic {
            synth: SynthKind::Degradation(p),
            horizon,
        } => Ok(build_rul_frame(&synth_drive_log(p, cfg.seed)?, &rul_opts(*horizon))?),
        DatasetConfig::Synthetic { synth, .. } => finish(synth_series(synth, cfg.seed)?),
    }
}

/// Ingests, preprocesses, windows and splits the configured dataset.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData, ExperimentError> {
    let frame = build_frame(cfg)?;
    let mode = match cfg.model.kind {
        ModelKind::Vanilla => WindowMode::NextStep,
        ModelKind::EncoderDecoder => WindowMode::Sequence,
    };
    let windows = make_windows::<f64>(&frame, cfg.model.lookback, mode)?;
    let split = train_val_test_split(windows.len(), cfg.split)?;
    let train = windows.range(split.train.clone(), "train");
    let val = windows.range(split.validation.clone(), "validation");
    let test = windows.range(split.test.clone(), "test");
    let summary = DatasetSummary {
        source: cfg.dataset.label().into(),
        frame_id: frame.id().into(),
        frame_rows: frame.len(),
        features: windows.feature_names().to_vec(),
        target: frame.target_name().into(),
        lookback: cfg.model.lookback,
        windows: windows.len(),
        train_windows: train.len(),
        val_windows: val.len(),
        test_windows: test.len(),
        hash: windows.content_hash(),
    };
    Ok(PreparedData {
        frame,
        windows,
        split,
        train,
        val,
        test,
        summary,
    })
}

fn architecture(cfg: &ExperimentConfig, data: &PreparedData) -> Architecture {
    Architecture {
        kind: cfg.model.kind,
        input_features: data.windows.n_features(),
        hidden: cfg.model.hidden,
        relu_units: cfg.model.relu_units,
        lookback: cfg.model.lookback,
        dropout: cfg.model.dropout,
    }
}

fn train_config(cfg: &ExperimentConfig, streams: &Streams, label: &str) -> TrainConfig {
    TrainConfig {
        seed: streams.derive(label).seed(),
        ..cfg.train.clone()
    }
}

/// The training and validation sets the final model sees: the last walk-forward
/// fold when cross-validating, the train/validation split otherwise.
fn final_sets(cfg: &ExperimentConfig, data: &PreparedData) -> Result<(WindowedDataset<f64>, WindowedDataset<f64>), ExperimentError> {
    if cfg.cv_folds >= 2 {
        let region = data.windows.range(0..data.split.validation.end, "cv");
        let plan = walk_forward_splits(region.len(), cfg.cv_folds)?;
        let last = plan.folds.last().expect("k >= 2 folds");
        Ok((
            region.range(last.train.clone(), "train"),
            region.range(last.validation.clone(), "validation"),
        ))
    } else {
        Ok((data.train.clone(), data.val.clone()))
    }
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub model: ForecastModel<f64>,
    pub history: Vec<EpochRecord>,
    pub cv: Option<CvSummary>,
    pub train_rmse: f64,
    pub val_rmse: f64,
    pub test_rmse: f64,
}

/// Trains the undefended model; with `cv_folds >= 2` it runs walk-forward CV
/// over the train+validation region and keeps the last fold's model.
pub fn train_baseline(cfg: &ExperimentConfig, data: &PreparedData) -> Result<BaselineRun, ExperimentError> {
    let streams = Streams::new(cfg.seed);
    let arch = architecture(cfg, data);
    let (model, history, cv) = if cfg.cv_folds >= 2 {
        let region = data.windows.range(0..data.split.validation.end, "cv");
        let plan = walk_forward_splits(region.len(), cfg.cv_folds)?;
        let mut folds = Vec::new();
        let mut last = None;
        for (i, fold) in plan.folds.iter().enumerate() {
            let tr = region.range(fold.train.clone(), "train");
            let va = region.range(fold.validation.clone(), "validation");
            let init = ForecastModel::new(&arch, &streams.derive(&format!("cv/{i}/init")))?;
            let out = train(init, &tr, Some(&va), &train_config(cfg, &streams, &format!("cv/{i}/train")))?;
            folds.push(FoldResult {
                fold: i,
                train_windows: tr.len(),
                val_windows: va.len(),
                train_rmse: evaluate(&out.model, &tr)?,
                val_rmse: evaluate(&out.model, &va)?,
            });
            log::info!("fold {i}: val rmse {:.5}", folds[i].val_rmse);
            last = Some((out.model, out.history));
        }
        let n = folds.len() as f64;
        let cv = CvSummary {
            k: cfg.cv_folds,
            mean_train_rmse: folds.iter().map(|f| f.train_rmse).sum::<f64>() / n,
            mean_val_rmse: folds.iter().map(|f| f.val_rmse).sum::<f64>() / n,
            folds,
        };
        let (m, h) = last.expect("at least two folds");
        (m, h, Some(cv))
    } else {
        let init = ForecastModel::new(&arch, &streams.derive("baseline/init"))?;
        let out = train(init, &data.train, Some(&data.val), &train_config(cfg, &streams, "baseline/train"))?;
        (out.model, out.history, None)
    };
    let (tr, va) = final_sets(cfg, data)?;
    Ok(BaselineRun {
        train_rmse: evaluate(&model, &tr)?,
        val_rmse: evaluate(&model, &va)?,
        test_rmse: evaluate(&model, &data.test)?,
        model,
        history,
        cv,
    })
}

fn checkpoint_path(out: &Path, name: &str) -> PathBuf {
    out.join("checkpoints").join(format!("{name}.ckpt"))
}

fn save_model(report: &mut ExperimentReport, out: &Path, name: &str, model: &ForecastModel<f64>, seed: u64) -> Result<String, ExperimentError> {
    std::fs::create_dir_all(out.join("checkpoints"))?;
    let id = save_checkpoint(&checkpoint_path(out, name), model, report.config.model.lookback, seed)?;
    report.checkpoints.insert(name.to_string(), id.clone());
    Ok(id)
}

fn load_baseline(out: &Path) -> Result<ForecastModel<f64>, ExperimentError> {
    let path = checkpoint_path(out, BASELINE);
    if !path.is_file() {
        return Err(ExperimentError::Config(format!(
            "baseline checkpoint {} not found; run the train stage first",
            path.display()
        )));
    }
    Ok(load_checkpoint(&path)?.1)
}

fn last_outputs(pred: &crate::autodiff::Tensor<f64>, target: &crate::autodiff::Tensor<f64>) -> Vec<(f64, f64)> {
    let o = target.shape()[1];
    (0..target.shape()[0])
        .map(|i| (target.data()[i * o + o - 1], pred.data()[i * o + o - 1]))
        .collect()
}

fn stage_train(cfg: &ExperimentConfig, report: &mut ExperimentReport, out: &Path) -> Result<(), ExperimentError> {
    let data = prepare_data(cfg)?;
    let run = train_baseline(cfg, &data)?;
    let id = save_model(report, out, BASELINE, &run.model, cfg.seed)?;
    let pred = predict(&run.model, &data.test)?;
    report.dataset = Some(data.summary.clone());
    report.clean = Some(CleanSection {
        checkpoint: id,
        cv: run.cv,
        train_rmse: run.train_rmse,
        val_rmse: run.val_rmse,
        test_rmse: run.test_rmse,
        history: run.history,
        test_predictions: last_outputs(&pred, data.test.targets()),
    });
    Ok(())
}

fn attack_cfg(cfg: &ExperimentConfig, kind: crate::attacks::AttackKind, eps: f64) -> AttackConfig {
    AttackConfig {
        iterations: cfg.attacks.iterations,
        clamp: cfg.attacks.clamp,
        ..AttackConfig::new(kind, eps, cfg.attacks.alpha.min(eps))
    }
}

fn stage_attack(cfg: &ExperimentConfig, report: &mut ExperimentReport, out: &Path) -> Result<(), ExperimentError> {
    let data = prepare_data(cfg)?;
    let baseline = load_baseline(out)?;
    let clean = evaluate(&baseline, &data.test)?;
    let names = data.test.feature_names().to_vec();
    let overlay_feature = names.iter().position(|n| n == data.frame.target_name()).unwrap_or(0);
    let mut rows = Vec::new();
    let mut perturbation = Vec::new();
    let mut overlays = Vec::new();
    for &kind in &cfg.attacks.kinds {
        for &eps in &cfg.attacks.epsilons {
            let ac = attack_cfg(cfg, kind, eps);
            let (batch, poisoned) = attack_dataset(&baseline, &data.test, &ac)?;
            let rmse = evaluate(&baseline, &poisoned)?;
            log::info!("{kind} eps {eps}: rmse {rmse:.5}");
            rows.push(AttackRow {
                attack: kind,
                epsilon: eps,
                iterations: batch.iterations,
                clean_rmse: clean,
                attack_rmse: rmse,
                percent_increase: percent_increase(clean, rmse),
            });
            let rep = imperceptibility_report(&batch, &names)?;
            let stats = if cfg.attacks.write_batches {
                let stem = format!("{}_{}", kind.label().to_lowercase(), super::num(eps));
                write_adversarial_batch(&batch, &names, &out.join("attacks"), &stem)?
            } else {
                AttackStats::from(&batch)
            };
            perturbation.push(PerturbationSummary {
                attack: kind,
                epsilon: eps,
                stats,
                per_feature: rep.per_feature,
            });
            if Some(&eps) == cfg.attacks.epsilons.last() {
                let series = overlay_series(&batch, overlay_feature);
                overlays.push(Overlay {
                    attack: kind,
                    epsilon: eps,
                    feature: names[overlay_feature].clone(),
                    clean: series.iter().map(|p| p.0).collect(),
                    perturbed: series.iter().map(|p| p.1).collect(),
                });
            }
        }
    }
    report.dataset = Some(data.summary);
    report.attacks = Some(AttackSection {
        checkpoint: report.checkpoints.get(BASELINE).cloned().unwrap_or_default(),
        grid: cfg.attacks.epsilons.clone(),
        alpha: cfg.attacks.alpha,
        rows,
        perturbation,
        overlays,
    });
    Ok(())
}

fn stage_defend(cfg: &ExperimentConfig, report: &mut ExperimentReport, out: &Path) -> Result<(), ExperimentError> {
    let data = prepare_data(cfg)?;
    let baseline = load_baseline(out)?;
    let (tr, va) = final_sets(cfg, &data)?;
    let arch = architecture(cfg, &data);
    let streams = Streams::new(cfg.seed);
    let mut trained: Vec<(String, crate::attacks::AttackKind, ForecastModel<f64>)> = Vec::new();
    let mut summaries = Vec::new();
    let mut record = |report: &mut ExperimentReport,
                      name: &str,
                      kind: crate::attacks::AttackKind,
                      outcome: crate::models::TrainOutcome<f64, ForecastModel<f64>>|
     -> Result<(), ExperimentError> {
        let seed = streams.derive(&format!("{name}/{kind}/train")).seed();
        let id = save_model(report, out, &format!("{name}-{}", kind.label().to_lowercase()), &outcome.model, seed)?;
        summaries.push(DefenseSummary {
            defense: name.into(),
            attack: kind,
            checkpoint: id,
            train_rmse: evaluate(&outcome.model, &tr)?,
            val_rmse: evaluate(&outcome.model, &va)?,
            test_clean_rmse: evaluate(&outcome.model, &data.test)?,
            skipped_batches: outcome.skipped_batches,
            history: outcome.history,
        });
        trained.push((name.into(), kind, outcome.model));
        Ok(())
    };
    for d in &cfg.defenses.daat {
        let label = format!("DAAT/{}", d.attack);
        let initial = if d.fresh_init {
            ForecastModel::new(&arch, &streams.derive(&format!("{label}/init")))?
        } else {
            baseline.clone()
        };
        let tc = train_config(cfg, &streams, &format!("{label}/train"));
        let outcome = daat_train(&tr, Some(&va), &baseline, initial, d, &tc)?;
        log::info!("{label} trained for {} epochs", outcome.history.len());
        record(report, "DAAT", d.attack, outcome)?;
    }
    for l in &cfg.defenses.lpat {
        let label = format!("{}/{}", l.label(), l.attack);
        let initial = ForecastModel::new(&arch, &streams.derive(&format!("{label}/init")))?;
        let tc = train_config(cfg, &streams, &format!("{label}/train"));
        let outcome = lpat_train(initial, &tr, Some(&va), l, &tc)?;
        log::info!("{label} trained for {} epochs", outcome.history.len());
        record(report, l.label(), l.attack, outcome)?;
    }
    let mut measurements = Vec::new();
    let mut rows = Vec::new();
    for &kind in &cfg.attacks.kinds {
        let defended: Vec<(String, &ForecastModel<f64>)> = trained
            .iter()
            .filter(|(_, k, _)| *k == kind)
            .map(|(n, _, m)| (n.clone(), m))
            .collect();
        if defended.is_empty() {
            continue;
        }
        let template = attack_cfg(cfg, kind, cfg.attacks.epsilons[0]);
        let (table, m) = defense_report(&baseline, &defended, &data.test, &[template], &cfg.attacks.epsilons)?;
        measurements.extend(m);
        rows.extend(table.rows);
    }
    report.dataset = Some(data.summary);
    report.defenses = Some(DefenseSection {
        baseline_checkpoint: report.checkpoints.get(BASELINE).cloned().unwrap_or_default(),
        grid: cfg.attacks.epsilons.clone(),
        summaries,
        measurements,
        table: DefenseTable { rows },
    });
    Ok(())
}

/// Trains one model per look-back; failures are recorded per point.
pub fn lookback_sweep(cfg: &ExperimentConfig, lookbacks: &[usize], out: Option<&Path>) -> Vec<SweepPoint> {
    lookbacks
        .iter()
        .map(|&l| {
            let mut c = cfg.clone();
            c.model.lookback = l;
            let attempt = || -> Result<SweepPoint, ExperimentError> {
                let data = prepare_data(&c)?;
                let run = train_baseline(&c, &data)?;
                let checkpoint = match out {
                    Some(dir) => {
                        std::fs::create_dir_all(dir.join("checkpoints"))?;
                        Some(save_checkpoint(&checkpoint_path(dir, &format!("sweep-l{l}")), &run.model, l, c.seed)?)
                    }
                    None => None,
                };
                Ok(SweepPoint {
                    lookback: l,
                    train_rmse: Some(run.train_rmse),
                    val_rmse: Some(run.val_rmse),
                    test_rmse: Some(run.test_rmse),
                    checkpoint,
                    dataset_hash: Some(data.summary.hash),
                    error: None,
                })
            };
            attempt().unwrap_or_else(|e| {
                log::warn!("sweep L={l} failed: {e}");
                SweepPoint {
                    lookback: l,
                    train_rmse: None,
                    val_rmse: None,
                    test_rmse: None,
                    checkpoint: None,
                    dataset_hash: None,
                    error: Some(e.to_string()),
                }
            })
        })
        .collect()
}

fn stage_sweep(cfg: &ExperimentConfig, report: &mut ExperimentReport, out: &Path) -> Result<(), ExperimentError> {
    let sw = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("no [sweep] section in the config".into()))?;
    let points = lookback_sweep(cfg, &sw.lookbacks, Some(out));
    for p in &points {
        if let Some(id) = &p.checkpoint {
            report.checkpoints.insert(format!("sweep-l{}", p.lookback), id.clone());
        }
    }
    report.sweep = Some(points);
    Ok(())
}

fn is_complete(cfg: &ExperimentConfig, r: &ExperimentReport) -> bool {
    r.clean.is_some() && r.attacks.is_some() && r.defenses.is_some() && (cfg.sweep.is_none() || r.sweep.is_some())
}

/// Runs the full pipeline.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    run_stage(cfg, Stage::All)
}

/// Runs one stage (or all of them), updating `report.json`, `tables/` and
/// `plots/` under the output directory. A failing stage leaves a report
/// marked incomplete with the stage name and cause.
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    let report_path = out.join("report.json");
    let mut report = match stage {
        Stage::Train | Stage::All => ExperimentReport::new(cfg),
        _ => match ExperimentReport::load(&report_path) {
            Ok(r) if r.config_hash == cfg.content_hash() => r,
            Ok(_) => {
                return Err(ExperimentError::Config(
                    "report.json was produced by a different config; rerun the train stage".into(),
                ))
            }
            Err(_) if stage == Stage::Sweep => ExperimentReport::new(cfg),
            Err(e) => {
                return Err(ExperimentError::Config(format!(
                    "cannot read {}: {e}; run the train stage first",
                    report_path.display()
                )))
            }
        },
    };
    report.config = cfg.clone();
    report.failed_stage = None;
    report.error = None;

    let stages: Vec<Stage> = match stage {
        Stage::All => {
            let mut s = vec![Stage::Train, Stage::Attack, Stage::Defend];
            if cfg.sweep.is_some() {
                s.push(Stage::Sweep);
            }
            s
        }
        Stage::Report => vec![],
        s => vec![s],
    };
    for s in stages {
        let t0 = Instant::now();
        log::info!("stage {} started", s.name());
        let result = match s {
            Stage::Train => stage_train(cfg, &mut report, &out),
            Stage::Attack => stage_attack(cfg, &mut report, &out),
            Stage::Defend => stage_defend(cfg, &mut report, &out),
            Stage::Sweep => stage_sweep(cfg, &mut report, &out),
            Stage::Report | Stage::All => Ok(()),
        };
        report.timings.push(StageTiming {
            stage: s.name().into(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        if let Err(e) = result {
            report.complete = false;
            report.failed_stage = Some(s.name().into());
            report.error = Some(e.to_string());
            report.save(&report_path)?;
            write_tables(&report, &out)?;
            emit_plot_data(&report, &out)?;
            return Err(ExperimentError::Stage {
                stage: s.name().into(),
                message: e.to_string(),
            });
        }
    }
    report.complete = is_complete(cfg, &report);
    report.save(&report_path)?;
    write_tables(&report, &out)?;
    emit_plot_data(&report, &out)?;
    Ok(report)
}
