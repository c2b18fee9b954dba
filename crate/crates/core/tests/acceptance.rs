//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.
//!
//! Set `ADVTS_UCI_PATH` to the household power consumption file to run the
//! real-data checks; otherwise the seasonal surrogate stands in for it and
//! the real-data-only check reports `SKIP`.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use advts::attacks::{attack, bim_iterations, AttackConfig, AttackKind};
use advts::data::{
    build_rul_frame, denormalize, label_rul, minmax_normalize, synth_drive_log, synth_series, walk_forward_splits,
    DegradationParams, RulFrameOptions, SeasonalParams, SynthKind,
};
use advts::defenses::{lpat_train, LpatConfig};
use advts::experiment::{run, run_stage, ExperimentConfig, ExperimentReport, Stage};
use advts::models::{train, Architecture, ForecastModel, ModelKind, TrainConfig};
use advts::rng::Streams;
use chrono::NaiveDate;
use num_rational::Rational64;
use rand::Rng;

fn report(n: u32, name: &str, pass: Option<bool>, detail: &str, elapsed: Duration) {
    let verdict = match pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n} {name}: {verdict} ({detail}; {:.1} s)", elapsed.as_secs_f64()).unwrap();
}

fn uci_path() -> Option<PathBuf> {
    std::env::var_os("ADVTS_UCI_PATH").map(PathBuf::from).filter(|p| p.is_file())
}

#[test]
fn criterion_1_gradient_oracle() {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for kind in [ModelKind::Vanilla, ModelKind::EncoderDecoder] {
        for (_, model, x, y) in common::smooth_draws(kind, 3, 1e-3) {
            worst = worst.max(common::max_gradient_error(&model, &x, &y, 1e-5));
        }
    }
    let el = t0.elapsed();
    let pass = worst < 1e-4 && el < Duration::from_secs(10);
    report(1, "gradient oracle", Some(pass), &format!("max relative error {worst:.2e}"), el);
    assert!(pass);
}

#[test]
fn criterion_2_attack_containment() {
    let t0 = Instant::now();
    let mut rng = Streams::new(2024).stream("containment");
    let mut contained = 0;
    let mut equal = 0;
    let n = 1000;
    let checks = 100;
    for i in 0..n {
        let kind = if i % 2 == 0 { ModelKind::Vanilla } else { ModelKind::EncoderDecoder };
        let model = common::mini_model(kind, i as u64 % 50);
        let (x, y) = common::mini_batch(kind, 4, 10_000 + i as u64);
        let eps = 0.5 * (1.0 - rng.random::<f64>());
        let cfg = if i % 4 < 2 {
            AttackConfig::fgsm(eps)
        } else {
            AttackConfig::bim(eps, 0.01f64.min(eps))
        };
        let out = attack(&model, &x, &y, &cfg).unwrap();
        if out.perturbed.data().iter().zip(x.data()).all(|(a, b)| (a - b).abs() <= eps + 1e-12) {
            contained += 1;
        }
        if i < checks {
            let f = attack(&model, &x, &y, &AttackConfig::fgsm(eps)).unwrap();
            let b = attack(&model, &x, &y, &AttackConfig { iterations: Some(1), ..AttackConfig::bim(eps, eps) }).unwrap();
            if f.perturbed == b.perturbed {
                equal += 1;
            }
        }
    }
    let el = t0.elapsed();
    let pass = contained == n && equal == checks && el < Duration::from_secs(30);
    report(
        2,
        "attack containment",
        Some(pass),
        &format!("{contained}/{n} inside the ball, {equal}/{checks} one-step BIM == FGSM"),
        el,
    );
    assert!(pass);
}

/// `min(4 + r, 1.25 r)` in exact arithmetic, rounded half away from zero.
fn schedule_oracle(eps: &str, alpha: &str) -> usize {
    let parse = |s: &str| {
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        let num: i64 = format!("{int}{frac}").parse().unwrap();
        Rational64::new(num, 10i64.pow(frac.len() as u32))
    };
    let r = parse(eps) / parse(alpha);
    let a = Rational64::from_integer(4) + r;
    let b = Rational64::new(5, 4) * r;
    let m = a.min(b);
    ((m + Rational64::new(1, 2)).floor().to_integer() as usize).max(1)
}

#[test]
fn criterion_3_bim_schedule() {
    let t0 = Instant::now();
    let grids: [(&[&str], &str); 3] = [
        (&["0.05", "0.1", "0.15", "0.2", "0.25"], "0.01"),
        (&["3", "5", "7", "9", "11"], "0.01"),
        (&["3", "5", "7", "9", "11"], "1"),
    ];
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for (eps, alpha) in grids {
        for e in eps {
            let got = bim_iterations(e.parse().unwrap(), alpha.parse().unwrap());
            let want = schedule_oracle(e, alpha);
            checked += 1;
            if got != want {
                mismatches.push(format!("eps {e} alpha {alpha}: {got} != {want}"));
            }
        }
    }
    let headline = bim_iterations(0.25, 0.01);
    let el = t0.elapsed();
    let pass = mismatches.is_empty() && headline == 29;
    report(
        3,
        "BIM iteration schedule",
        Some(pass),
        &format!("{checked} grid values, (0.25, 0.01) -> {headline}, mismatches {mismatches:?}"),
        el,
    );
    assert!(pass);
}

const DESK: &str = r#"
schema_version = 1
name = "desk"
seed = 11
cv_folds = 0

[dataset]
source = "synthetic"
synth = { kind = "seasonal", n_samples = 1400 }

[model]
kind = "vanilla"
lookback = 3
hidden = 32
relu_units = 32

[train]
epochs = 40
batch_size = 32
learning_rate = 0.003
patience = 8

[attacks]
epsilons = [0.05, 0.1, 0.15, 0.2, 0.25]
write_batches = false

[[defenses.daat]]
attack = "bim"
epsilons = [0.05, 0.1, 0.15, 0.2, 0.25]

[[defenses.lpat]]
attack = "fgsm"
schedule = { schedule = "deterministic", epsilon = 0.15 }

[[defenses.lpat]]
attack = "bim"
schedule = { schedule = "deterministic", epsilon = 0.15 }
"#;

struct DeskRun {
    _dir: tempfile::TempDir,
    report: ExperimentReport,
    source: &'static str,
    elapsed: Duration,
}

fn desk_config(out: &Path) -> (ExperimentConfig, &'static str) {
    let mut cfg = ExperimentConfig::from_toml(DESK).unwrap();
    cfg.output_dir = out.to_path_buf();
    match uci_path() {
        Some(path) => {
            cfg.dataset = advts::experiment::DatasetConfig::Electricity { path };
            cfg.model.lookback = 1;
            (cfg, "UCI household power")
        }
        None => (cfg, "seasonal surrogate"),
    }
}

/// Trains, attacks and defends once; shared by the trend and defense checks.
fn desk() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let t0 = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let (cfg, source) = desk_config(dir.path());
        run_stage(&cfg, Stage::Train).unwrap();
        run_stage(&cfg, Stage::Attack).unwrap();
        let report = run_stage(&cfg, Stage::Defend).unwrap();
        DeskRun {
            _dir: dir,
            report,
            source,
            elapsed: t0.elapsed(),
        }
    })
}

#[test]
fn criterion_4_attack_trend() {
    let t0 = Instant::now();
    let run = desk();
    let rows = &run.report.attacks.as_ref().unwrap().rows;
    let series = |k: AttackKind| -> Vec<f64> { rows.iter().filter(|r| r.attack == k).map(|r| r.attack_rmse).collect() };
    let (f, b) = (series(AttackKind::Fgsm), series(AttackKind::Bim));
    let rising = |v: &[f64]| v.windows(2).all(|w| w[1] >= w[0]);
    let bim_stronger = f.iter().zip(&b).all(|(f, b)| *b >= 0.98 * f);
    let el = t0.elapsed().max(run.elapsed);
    let pass = f.len() == 5 && rising(&f) && rising(&b) && bim_stronger && el < Duration::from_secs(600);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    report(
        4,
        "attack trend",
        Some(pass),
        &format!("{}; FGSM [{}], BIM [{}]", run.source, fmt(&f), fmt(&b)),
        el,
    );
    assert!(pass);
}

#[test]
fn criterion_5_clean_model_on_real_data() {
    let t0 = Instant::now();
    let Some(path) = uci_path() else {
        report(5, "clean model on real data", None, "ADVTS_UCI_PATH not set", t0.elapsed());
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_toml(DESK).unwrap();
    cfg.output_dir = dir.path().to_path_buf();
    cfg.dataset = advts::experiment::DatasetConfig::Electricity { path };
    cfg.cv_folds = 3;
    cfg.model.lookback = 1;
    cfg.model.hidden = 100;
    cfg.model.relu_units = 100;
    cfg.train.learning_rate = 0.001;
    cfg.train.epochs = 50;
    let out = run_stage(&cfg, Stage::Train).unwrap();
    let rmse = out.clean.unwrap().test_rmse;
    let el = t0.elapsed();
    let pass = rmse <= 0.12 && el < Duration::from_secs(900);
    report(5, "clean model on real data", Some(pass), &format!("test RMSE {rmse:.4}"), el);
    assert!(pass);
}

#[test]
fn criterion_6_defense_efficacy() {
    let t0 = Instant::now();
    let run = desk();
    let table = &run.report.defenses.as_ref().unwrap().table;
    let daat = table.mean_decrease(AttackKind::Bim, "DAAT").unwrap();
    let dlpat_f = table.mean_decrease(AttackKind::Fgsm, "DLPAT").unwrap();
    let dlpat_b = table.mean_decrease(AttackKind::Bim, "DLPAT").unwrap();
    let el = t0.elapsed().max(run.elapsed);
    let pass = daat >= 30.0 && dlpat_f > 0.0 && dlpat_b > 0.0 && el < Duration::from_secs(1200);
    report(
        6,
        "defense efficacy",
        Some(pass),
        &format!(
            "{}; mean %decrease DAAT/BIM {daat:.2}, DLPAT/FGSM {dlpat_f:.2}, DLPAT/BIM {dlpat_b:.2}",
            run.source
        ),
        el,
    );
    assert!(pass);
}

#[test]
fn criterion_7_data_pipeline_oracles() {
    let t0 = Instant::now();
    let p = DegradationParams {
        n_serials: 100,
        n_healthy: 5,
        ..DegradationParams::default()
    };
    let log = synth_drive_log(&p, 77).unwrap();
    let mut label_ok = true;
    for h in [1u32, 5, 25, 45] {
        let mut fail = std::collections::HashMap::new();
        for r in log.rows.iter().filter(|r| r.failure) {
            fail.insert(r.serial.clone(), r.date);
        }
        let mut want = Vec::new();
        for r in &log.rows {
            if let Some(&f) = fail.get(&r.serial) {
                let mut d: NaiveDate = r.date;
                let mut days = 0;
                while d < f {
                    d = d.succ_opt().unwrap();
                    days += 1;
                }
                if (1..=h).contains(&days) {
                    want.push((r.serial.clone(), r.date, days));
                }
            }
        }
        let got: Vec<_> = label_rul(&log, h).unwrap().into_iter().map(|l| (l.serial, l.date, l.rul)).collect();
        label_ok &= got == want;
    }
    label_ok &= build_rul_frame(&log, &RulFrameOptions::default()).unwrap().segments().len() == 100;

    let mut folds_ok = true;
    let mut plans = 0;
    for n in (3..=600).step_by(7) {
        for k in 2..=10 {
            if n <= k {
                continue;
            }
            let plan = walk_forward_splits(n, k).unwrap();
            plans += 1;
            let mut prev_end = 0;
            for f in &plan.folds {
                folds_ok &= f.train.start == 0 && f.train.end == f.validation.start;
                folds_ok &= f.train.end > prev_end && !f.validation.is_empty();
                prev_end = f.train.end;
            }
            folds_ok &= plan.folds.len() == k && plan.folds.last().unwrap().validation.end == n;
        }
    }

    let frame = synth_series(
        &SynthKind::Seasonal(SeasonalParams {
            n_samples: 500,
            ..SeasonalParams::default()
        }),
        5,
    )
    .unwrap();
    let back = denormalize(&minmax_normalize(&frame, 0.0, 1.0).unwrap());
    let mut worst: f64 = 0.0;
    for (a, b) in frame.columns().iter().zip(back.columns()) {
        for (x, y) in a.values.iter().zip(&b.values) {
            worst = worst.max((x.unwrap() - y.unwrap()).abs());
        }
    }
    let el = t0.elapsed();
    let pass = label_ok && folds_ok && worst <= 1e-12 && el < Duration::from_secs(10);
    report(
        7,
        "data pipeline oracles",
        Some(pass),
        &format!("RUL labels {label_ok}, {plans} fold plans {folds_ok}, round trip error {worst:.1e}"),
        el,
    );
    assert!(pass);
}

fn table_bytes(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(out.join("tables"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn criterion_8_determinism() {
    let t0 = Instant::now();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let mut tables = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::load(&config).unwrap();
        cfg.output_dir = dir.path().to_path_buf();
        run(&cfg).unwrap();
        tables.push(table_bytes(dir.path()));
    }
    let rows: usize = tables[0]
        .iter()
        .map(|(_, b)| b.iter().filter(|&&c| c == b'\n').count().saturating_sub(1))
        .sum();
    let el = t0.elapsed();
    let pass = !tables[0].is_empty() && tables[0] == tables[1] && el < Duration::from_secs(300);
    report(
        8,
        "determinism",
        Some(pass),
        &format!("{} tables, {rows} rows, identical {}", tables[0].len(), tables[0] == tables[1]),
        el,
    );
    assert!(pass);
}

#[test]
fn criterion_9_lpat_zero_epsilon() {
    let t0 = Instant::now();
    let frame = synth_series(
        &SynthKind::Seasonal(SeasonalParams {
            n_samples: 400,
            ..SeasonalParams::default()
        }),
        9,
    )
    .unwrap();
    let frame = minmax_normalize(&frame, 0.0, 1.0).unwrap();
    let data = advts::data::make_windows::<f64>(&frame, 3, advts::data::WindowMode::NextStep).unwrap();
    let (tr, va) = (data.range(0..300, "train"), data.range(300..data.len(), "validation"));
    let arch = Architecture {
        kind: ModelKind::Vanilla,
        input_features: data.n_features(),
        hidden: 16,
        relu_units: 16,
        lookback: 3,
        dropout: 0.1,
    };
    let cfg = TrainConfig {
        epochs: 8,
        seed: 99,
        ..TrainConfig::default()
    };
    let mut equal = true;
    for kind in [AttackKind::Fgsm, AttackKind::Bim] {
        let init = ForecastModel::new(&arch, &Streams::new(4)).unwrap();
        let plain = train(init.clone(), &tr, Some(&va), &cfg).unwrap();
        let lpat = lpat_train(init, &tr, Some(&va), &LpatConfig::deterministic(kind, 0.0), &cfg).unwrap();
        let bits = |h: &[advts::models::EpochRecord]| -> Vec<u64> {
            h.iter().flat_map(|r| [r.train_loss.to_bits(), r.val_rmse.unwrap().to_bits()]).collect()
        };
        equal &= bits(&plain.history) == bits(&lpat.history) && plain.model == lpat.model;
    }
    let el = t0.elapsed();
    let pass = equal && el < Duration::from_secs(60);
    report(9, "LPAT zero-epsilon equivalence", Some(pass), &format!("bitwise equal {equal}"), el);
    assert!(pass);
}
