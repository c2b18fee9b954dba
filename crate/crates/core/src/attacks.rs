//! White-box gradient-sign evasion attacks and perturbation statistics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::data::{DataError, WindowedDataset};
use crate::models::{Forecaster, Mode, ModelError};
use crate::scalar::Scalar;

/// Windows per tape when computing input gradients.
const ATTACK_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("attack batch is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<AutodiffError> for AttackError {
    fn from(e: AutodiffError) -> Self {
        Self::Model(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Bim,
}

impl AttackKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Fgsm => "FGSM",
            Self::Bim => "BIM",
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    /// BIM step size.
    pub alpha: f64,
    /// Replaces the scheduled BIM iteration count.
    pub iterations: Option<usize>,
    /// Keeps perturbed inputs inside `[lo, hi]`.
    pub clamp: Option<(f64, f64)>,
}

pub const DEFAULT_ALPHA: f64 = 0.01;

impl AttackConfig {
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            epsilon,
            alpha: DEFAULT_ALPHA,
            iterations: None,
            clamp: None,
        }
    }

    pub fn bim(epsilon: f64, alpha: f64) -> Self {
        Self {
            kind: AttackKind::Bim,
            epsilon,
            alpha,
            iterations: None,
            clamp: None,
        }
    }

    pub fn new(kind: AttackKind, epsilon: f64, alpha: f64) -> Self {
        match kind {
            AttackKind::Fgsm => Self { alpha, ..Self::fgsm(epsilon) },
            AttackKind::Bim => Self::bim(epsilon, alpha),
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(AttackError::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.kind == AttackKind::Bim {
            if !(self.alpha > 0.0) {
                return Err(AttackError::Config(format!("alpha must be positive, got {}", self.alpha)));
            }
            if self.alpha > self.epsilon {
                return Err(AttackError::Config(format!(
                    "alpha {} exceeds epsilon {}",
                    self.alpha, self.epsilon
                )));
            }
            if self.iterations == Some(0) {
                return Err(AttackError::Config("iteration override must be at least 1".into()));
            }
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo < hi) {
                return Err(AttackError::Config(format!("clamp range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    /// Number of gradient steps this attack takes.
    pub fn steps(&self) -> usize {
        match self.kind {
            AttackKind::Fgsm => 1,
            AttackKind::Bim => self
                .iterations
                .unwrap_or_else(|| bim_iterations(self.epsilon, self.alpha)),
        }
    }
}

/// Scheduled BIM iteration count `round(min(4 + ε/α, 1.25 ε/α))`, at least 1.
///
/// Rounds half away from zero. The ratio is snapped to 1e-9 first so that
/// grid values such as 0.15 / 0.01 are not pushed across a rounding boundary
/// by binary representation error.
pub fn bim_iterations(epsilon: f64, alpha: f64) -> usize {
    if !(epsilon > 0.0 && alpha > 0.0) {
        return 1;
    }
    let r = ((epsilon / alpha) * 1e9).round() / 1e9;
    let i = (4.0 + r).min(1.25 * r);
    let snapped = (i * 1e9).round() / 1e9;
    (snapped.round() as usize).max(1)
}

/// Clean and perturbed inputs of one attack run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialBatch<T> {
    pub clean: Tensor<T>,
    pub perturbed: Tensor<T>,
    pub targets: Tensor<T>,
    /// Per-window L∞ distance.
    pub linf: Vec<T>,
    /// Per-window L2 distance.
    pub l2: Vec<T>,
    pub config: AttackConfig,
    pub iterations: usize,
}

impl<T: Scalar> AdversarialBatch<T> {
    fn new(clean: Tensor<T>, perturbed: Tensor<T>, targets: Tensor<T>, config: AttackConfig, iterations: usize) -> Self {
        let n = clean.shape()[0];
        let w = clean.numel().checked_div(n).unwrap_or(0);
        let mut linf = Vec::with_capacity(n);
        let mut l2 = Vec::with_capacity(n);
        for i in 0..n {
            let mut m = T::zero();
            let mut s = T::zero();
            for (&a, &b) in clean.data()[i * w..(i + 1) * w].iter().zip(&perturbed.data()[i * w..(i + 1) * w]) {
                let d = (b - a).abs();
                m = m.max(d);
                s += d * d;
            }
            linf.push(m);
            l2.push(s.sqrt());
        }
        Self {
            clean,
            perturbed,
            targets,
            linf,
            l2,
            config,
            iterations,
        }
    }

    pub fn len(&self) -> usize {
        self.clean.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_linf(&self) -> T {
        self.linf.iter().fold(T::zero(), |a, &b| a.max(b))
    }
}

/// Sum of squared errors over a batch and its gradient with respect to the inputs.
///
/// Dropout is off and parameters are constants.
pub fn input_gradient<T: Scalar, M: Forecaster<T>>(
    model: &M,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<(T, Tensor<T>), AttackError> {
    let mut tape = Tape::new();
    let params = model.record_params(&mut tape, false);
    let x = tape.leaf(inputs.clone(), true);
    let y = tape.constant(targets.clone());
    let pred = model.forward(&mut tape, x, &params, &mut Mode::Eval)?;
    let diff = tape.sub(pred, y)?;
    let sq = tape.mul(diff, diff)?;
    let loss = tape.sum(sq)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((value, grads.wrt(x)))
}

fn chunked_gradient<T: Scalar, M: Forecaster<T>>(
    model: &M,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<Tensor<T>, AttackError> {
    let n = inputs.shape()[0];
    if n <= ATTACK_CHUNK {
        return Ok(input_gradient(model, inputs, targets)?.1);
    }
    let w = inputs.numel() / n;
    let o = targets.numel() / n;
    let mut out = Vec::with_capacity(inputs.numel());
    for start in (0..n).step_by(ATTACK_CHUNK) {
        let end = (start + ATTACK_CHUNK).min(n);
        let mut xs = inputs.shape().to_vec();
        xs[0] = end - start;
        let x = Tensor::new(xs, inputs.data()[start * w..end * w].to_vec())?;
        let y = Tensor::new(vec![end - start, o], targets.data()[start * o..end * o].to_vec())?;
        out.extend(input_gradient(model, &x, &y)?.1.into_data());
    }
    Ok(Tensor::new(inputs.shape().to_vec(), out)?)
}

fn check_batch<T: Scalar>(inputs: &Tensor<T>, targets: &Tensor<T>) -> Result<(), AttackError> {
    match *inputs.shape() {
        [0, _, _] => Err(AttackError::Empty),
        [n, _, _] if targets.shape().len() == 2 && targets.shape()[0] == n => Ok(()),
        _ => Err(AttackError::Model(ModelError::Autodiff(AutodiffError::ShapeMismatch {
            op: "attack",
            left: inputs.shape().to_vec(),
            right: targets.shape().to_vec(),
        }))),
    }
}

fn clamp_into<T: Scalar>(x: &mut [T], range: Option<(f64, f64)>) {
    if let Some((lo, hi)) = range {
        let (lo, hi) = (T::of(lo), T::of(hi));
        for v in x {
            *v = v.max(lo).min(hi);
        }
    }
}

/// `X + ε·sign(∇_X J)` with `J` the squared error of the model's predictions.
pub fn fgsm<T: Scalar, M: Forecaster<T>>(
    model: &M,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    epsilon: f64,
) -> Result<AdversarialBatch<T>, AttackError> {
    fgsm_with(model, inputs, targets, &AttackConfig::fgsm(epsilon))
}

fn fgsm_with<T: Scalar, M: Forecaster<T>>(
    model: &M,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    cfg: &AttackConfig,
) -> Result<AdversarialBatch<T>, AttackError> {
    cfg.validate()?;
    check_batch(inputs, targets)?;
    let g = chunked_gradient(model, inputs, targets)?;
    let eps = T::of(cfg.epsilon);
    let mut adv: Vec<T> = inputs
        .data()
        .iter()
        .zip(g.data())
        .map(|(&x, &d)| x + eps * d.signum0())
        .collect();
    clamp_into(&mut adv, cfg.clamp);
    let perturbed = Tensor::new(inputs.shape().to_vec(), adv)?;
    Ok(AdversarialBatch::new(inputs.clone(), perturbed, targets.clone(), *cfg, 1))
}

/// Iterated sign steps of size `α`, each followed by projection onto the ε-ball around `X`.
pub fn bim<T: Scalar, M: Forecaster<T>>(
    model: &M,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    epsilon: f64,
    alpha: f64,
) -> Result<AdversarialBatch<T>, AttackError> {
    bim_with(model, inputs, targets, &AttackConfig::bim(epsilon, alpha))
}

fn bim_with<T: Scalar, M: Forecaster<T>>(
    model: &M,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    cfg: &AttackConfig,
) -> Result<AdversarialBatch<T>, AttackError> {
    cfg.validate()?;
    check_batch(inputs, targets)?;
    let steps = cfg.steps();
    let eps = T::of(cfg.epsilon);
    let alpha = T::of(cfg.alpha);
    let mut adv = inputs.clone();
    for _ in 0..steps {
        let g = chunked_gradient(model, &adv, targets)?;
        for ((a, &x), &d) in adv.data_mut().iter_mut().zip(inputs.data()).zip(g.data()) {
            let stepped = *a + alpha * d.signum0();
            *a = (x + eps).min((x - eps).max(stepped));
        }
        clamp_into(adv.data_mut(), cfg.clamp);
    }
    Ok(AdversarialBatch::new(inputs.clone(), adv, targets.clone(), *cfg, steps))
}

/// Runs the configured attack on a batch.
pub fn attack<T: Scalar, M: Forecaster<T>>(
    model: &M,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    cfg: &AttackConfig,
) -> Result<AdversarialBatch<T>, AttackError> {
    match cfg.kind {
        AttackKind::Fgsm => fgsm_with(model, inputs, targets, cfg),
        AttackKind::Bim => bim_with(model, inputs, targets, cfg),
    }
}

/// Attacks every window of `data`, returning the batch and a poisoned copy of the dataset.
pub fn attack_dataset<T: Scalar, M: Forecaster<T>>(
    model: &M,
    data: &WindowedDataset<T>,
    cfg: &AttackConfig,
) -> Result<(AdversarialBatch<T>, WindowedDataset<T>), AttackError> {
    let batch = attack(model, data.inputs(), data.targets(), cfg)?;
    let split = format!("{}+{}@{}", data.provenance().split, cfg.kind.label().to_lowercase(), cfg.epsilon);
    let poisoned = data.with_inputs(batch.perturbed.clone(), &split)?;
    Ok((batch, poisoned))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub feature: String,
    pub max_linf: f64,
    pub mean_linf: f64,
    pub max_l2: f64,
    pub mean_l2: f64,
}

/// Distances of one feature of one window, taken over its time steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub sample: usize,
    pub feature: String,
    pub linf: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImperceptibilityReport {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub iterations: usize,
    pub per_feature: Vec<FeatureStats>,
    pub rows: Vec<PerturbationRow>,
}

/// Per-feature distance statistics of a batch.
pub fn imperceptibility_report<T: Scalar>(
    batch: &AdversarialBatch<T>,
    feature_names: &[String],
) -> Result<ImperceptibilityReport, AttackError> {
    let (n, l, f) = match *batch.clean.shape() {
        [n, l, f] if n > 0 => (n, l, f),
        _ => return Err(AttackError::Empty),
    };
    let name = |j: usize| feature_names.get(j).cloned().unwrap_or_else(|| format!("feature_{j}"));
    let mut rows = Vec::with_capacity(n * f);
    for i in 0..n {
        for j in 0..f {
            let (mut m, mut s) = (0.0f64, 0.0f64);
            for t in 0..l {
                let k = (i * l + t) * f + j;
                let d = (batch.perturbed.data()[k] - batch.clean.data()[k]).abs().as_f64();
                m = m.max(d);
                s += d * d;
            }
            rows.push(PerturbationRow {
                sample: i,
                feature: name(j),
                linf: m,
                l2: s.sqrt(),
            });
        }
    }
    let per_feature = (0..f)
        .map(|j| {
            let col = rows.iter().skip(j).step_by(f);
            let (mut max_linf, mut sum_linf, mut max_l2, mut sum_l2) = (0.0f64, 0.0, 0.0f64, 0.0);
            for r in col {
                max_linf = max_linf.max(r.linf);
                sum_linf += r.linf;
                max_l2 = max_l2.max(r.l2);
                sum_l2 += r.l2;
            }
            FeatureStats {
                feature: name(j),
                max_linf,
                mean_linf: sum_linf / n as f64,
                max_l2,
                mean_l2: sum_l2 / n as f64,
            }
        })
        .collect();
    Ok(ImperceptibilityReport {
        kind: batch.config.kind,
        epsilon: batch.config.epsilon,
        iterations: batch.iterations,
        per_feature,
        rows,
    })
}

/// Clean and perturbed value of `feature` at the last step of every window, in window order.
pub fn overlay_series<T: Scalar>(batch: &AdversarialBatch<T>, feature: usize) -> Vec<(f64, f64)> {
    let [n, l, f] = *batch.clean.shape() else {
        return Vec::new();
    };
    if feature >= f {
        return Vec::new();
    }
    (0..n)
        .map(|i| {
            let k = (i * l + l - 1) * f + feature;
            (batch.clean.data()[k].as_f64(), batch.perturbed.data()[k].as_f64())
        })
        .collect()
}

fn write_windows<T: Scalar>(path: &Path, x: &Tensor<T>, names: &[String]) -> Result<(), AttackError> {
    let [n, l, f] = *x.shape() else {
        return Err(AttackError::Empty);
    };
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample".to_string(), "step".to_string()];
    header.extend((0..f).map(|j| names.get(j).cloned().unwrap_or_else(|| format!("feature_{j}"))));
    w.write_record(&header)?;
    for i in 0..n {
        for t in 0..l {
            let mut rec = vec![i.to_string(), t.to_string()];
            let base = (i * l + t) * f;
            rec.extend(x.data()[base..base + f].iter().map(|v| format!("{:?}", v.as_f64())));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Summary block stored next to the CSV pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackStats {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub clamp: Option<(f64, f64)>,
    pub samples: usize,
    pub max_linf: f64,
    pub mean_linf: f64,
    pub mean_l2: f64,
}

impl<T: Scalar> From<&AdversarialBatch<T>> for AttackStats {
    fn from(b: &AdversarialBatch<T>) -> Self {
        let n = b.len().max(1) as f64;
        Self {
            kind: b.config.kind,
            epsilon: b.config.epsilon,
            alpha: b.config.alpha,
            iterations: b.iterations,
            clamp: b.config.clamp,
            samples: b.len(),
            max_linf: b.max_linf().as_f64(),
            mean_linf: b.linf.iter().map(|v| v.as_f64()).sum::<f64>() / n,
            mean_l2: b.l2.iter().map(|v| v.as_f64()).sum::<f64>() / n,
        }
    }
}

/// Writes `<stem>_clean.csv`, `<stem>_perturbed.csv` and `<stem>_stats.json` into `dir`.
pub fn write_adversarial_batch<T: Scalar>(
    batch: &AdversarialBatch<T>,
    feature_names: &[String],
    dir: &Path,
    stem: &str,
) -> Result<AttackStats, AttackError> {
    fs::create_dir_all(dir)?;
    write_windows(&dir.join(format!("{stem}_clean.csv")), &batch.clean, feature_names)?;
    write_windows(&dir.join(format!("{stem}_perturbed.csv")), &batch.perturbed, feature_names)?;
    let stats = AttackStats::from(batch);
    fs::write(dir.join(format!("{stem}_stats.json")), serde_json::to_string_pretty(&stats)?)?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, ForecastModel, ModelKind};
    use crate::rng::Streams;
    use rand::Rng;

    fn setup(kind: ModelKind) -> (ForecastModel<f64>, Tensor<f64>, Tensor<f64>) {
        let arch = Architecture {
            kind,
            input_features: 2,
            hidden: 5,
            relu_units: 5,
            lookback: 4,
            dropout: 0.1,
        };
        let m = ForecastModel::new(&arch, &Streams::new(4)).unwrap();
        let mut rng = Streams::new(8).stream("data");
        let x = Tensor::new(vec![6, 4, 2], (0..48).map(|_| rng.random::<f64>()).collect()).unwrap();
        let o = if kind == ModelKind::Vanilla { 1 } else { 4 };
        let y = Tensor::new(vec![6, o], (0..6 * o).map(|_| rng.random::<f64>()).collect()).unwrap();
        (m, x, y)
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(bim_iterations(0.25, 0.01), 29);
        assert_eq!(bim_iterations(0.05, 0.01), 6);
        assert_eq!(bim_iterations(11.0, 0.01), 1104);
        assert_eq!(bim_iterations(0.001, 0.01), 1);
    }

    #[test]
    fn fgsm_steps_are_signed_epsilon() {
        let (m, x, y) = setup(ModelKind::Vanilla);
        let b = fgsm(&m, &x, &y, 0.1).unwrap();
        for (a, c) in b.perturbed.data().iter().zip(x.data()) {
            let d = a - c;
            assert!(d == 0.0 || (d.abs() - 0.1).abs() < 1e-15, "{d}");
        }
        assert!(b.max_linf() <= 0.1 + 1e-12);
    }

    #[test]
    fn single_full_step_bim_is_fgsm() {
        for kind in [ModelKind::Vanilla, ModelKind::EncoderDecoder] {
            let (m, x, y) = setup(kind);
            let f = fgsm(&m, &x, &y, 0.2).unwrap();
            let cfg = AttackConfig {
                iterations: Some(1),
                ..AttackConfig::bim(0.2, 0.2)
            };
            let b = attack(&m, &x, &y, &cfg).unwrap();
            assert_eq!(f.perturbed, b.perturbed);
        }
    }

    #[test]
    fn bim_stays_in_ball() {
        let (m, x, y) = setup(ModelKind::EncoderDecoder);
        let b = bim(&m, &x, &y, 0.05, 0.01).unwrap();
        assert_eq!(b.iterations, 6);
        assert!(b.linf.iter().all(|&d| d <= 0.05 + 1e-12));
    }

    #[test]
    fn invalid_configs_rejected() {
        let (m, x, y) = setup(ModelKind::Vanilla);
        assert!(matches!(fgsm(&m, &x, &y, 0.0), Err(AttackError::Config(_))));
        assert!(matches!(bim(&m, &x, &y, 0.01, 0.02), Err(AttackError::Config(_))));
    }

    #[test]
    fn clamp_keeps_range() {
        let (m, x, y) = setup(ModelKind::Vanilla);
        let cfg = AttackConfig {
            clamp: Some((0.0, 1.0)),
            ..AttackConfig::fgsm(0.4)
        };
        let b = attack(&m, &x, &y, &cfg).unwrap();
        assert!(b.perturbed.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn report_shapes() {
        let (m, x, y) = setup(ModelKind::Vanilla);
        let b = fgsm(&m, &x, &y, 0.1).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let r = imperceptibility_report(&b, &names).unwrap();
        assert_eq!(r.rows.len(), 6 * 2);
        assert_eq!(r.per_feature.len(), 2);
        assert_eq!(overlay_series(&b, 1).len(), 6);
    }

    #[test]
    fn no_perturbation_has_zero_distance() {
        let (_, x, y) = setup(ModelKind::Vanilla);
        let b = AdversarialBatch::new(x.clone(), x, y, AttackConfig::fgsm(0.1), 1);
        let r = imperceptibility_report(&b, &[]).unwrap();
        assert!(r.rows.iter().all(|row| row.linf == 0.0 && row.l2 == 0.0));
    }

    #[test]
    fn batch_files_written() {
        let (m, x, y) = setup(ModelKind::Vanilla);
        let b = fgsm(&m, &x, &y, 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let s = write_adversarial_batch(&b, &[], dir.path(), "fgsm_0.1").unwrap();
        assert_eq!(s.samples, 6);
        let mut r = csv::Reader::from_path(dir.path().join("fgsm_0.1_perturbed.csv")).unwrap();
        assert_eq!(r.records().count(), 6 * 4);
    }
}
