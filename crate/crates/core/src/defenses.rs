//! Adversarial-training defenses: data augmentation (DAAT) and layer-wise
//! parameter perturbation (LPAT).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{attack, attack_dataset, bim_iterations, AttackConfig, AttackError, AttackKind, DEFAULT_ALPHA};
use crate::autodiff::{AutodiffError, Tensor};
use crate::data::{DataError, WindowedDataset};
use crate::models::{
    evaluate, fit, loss_and_gradients, BatchGradients, BatchOutcome, Forecaster, FreshMasks, Mode, ModelError,
    ReplayMasks, TrainConfig, TrainOutcome,
};
use crate::rng::{StreamRng, Streams};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("invalid defense configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("missing report cells: {}", format_missing(.0))]
    MissingCells(Vec<(String, AttackKind, f64)>),
}

fn format_missing(cells: &[(String, AttackKind, f64)]) -> String {
    cells
        .iter()
        .map(|(d, a, e)| format!("({d}, {a}, {e})"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaatConfig {
    pub attack: AttackKind,
    /// One adversarial copy per value; `0` contributes a clean copy.
    pub epsilons: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub clamp: Option<(f64, f64)>,
    /// Regenerate the adversarial copies from the model being trained before every epoch.
    #[serde(default)]
    pub regenerate_per_epoch: bool,
    /// Train the robust model from a fresh initialization instead of the baseline weights.
    #[serde(default = "default_true")]
    pub fresh_init: bool,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_true() -> bool {
    true
}

impl DaatConfig {
    pub fn new(attack: AttackKind, epsilons: Vec<f64>) -> Self {
        Self {
            attack,
            epsilons,
            alpha: DEFAULT_ALPHA,
            iterations: None,
            clamp: None,
            regenerate_per_epoch: false,
            fresh_init: true,
        }
    }

    pub fn validate(&self) -> Result<(), DefenseError> {
        if self.epsilons.is_empty() {
            return Err(DefenseError::Config("epsilon grid is empty".into()));
        }
        if self.epsilons.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(DefenseError::Config(format!("epsilon grid has negative values: {:?}", self.epsilons)));
        }
        if self.epsilons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DefenseError::Config(format!(
                "epsilon grid must be strictly increasing: {:?}",
                self.epsilons
            )));
        }
        Ok(())
    }

    fn attack_config(&self, epsilon: f64) -> AttackConfig {
        AttackConfig {
            alpha: self.alpha.min(epsilon),
            iterations: self.iterations,
            clamp: self.clamp,
            ..AttackConfig::new(self.attack, epsilon, self.alpha)
        }
    }
}

/// Clean windows followed by one attacked copy per grid value, targets untouched.
pub fn daat_build<T: Scalar, M: Forecaster<T>>(
    train: &WindowedDataset<T>,
    source: &M,
    cfg: &DaatConfig,
) -> Result<WindowedDataset<T>, DefenseError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(DefenseError::EmptyTrain);
    }
    let mut parts = Vec::with_capacity(cfg.epsilons.len() + 1);
    parts.push(train.clone());
    for &eps in &cfg.epsilons {
        if eps == 0.0 {
            parts.push(train.clone());
        } else {
            parts.push(attack_dataset(source, train, &cfg.attack_config(eps))?.1);
        }
    }
    Ok(WindowedDataset::concat(&parts, "daat")?)
}

/// Trains `initial` on the augmented set built from `baseline`.
pub fn daat_train<T: Scalar, M: Forecaster<T>>(
    train: &WindowedDataset<T>,
    val: Option<&WindowedDataset<T>>,
    baseline: &M,
    initial: M,
    cfg: &DaatConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome<T, M>, DefenseError> {
    let augmented = daat_build(train, baseline, cfg)?;
    let mut hook = |_epoch: usize, current: &M| -> Result<Option<WindowedDataset<T>>, ModelError> {
        daat_build(train, current, cfg).map(Some).map_err(|e| match e {
            DefenseError::Model(m) => m,
            other => ModelError::Config(other.to_string()),
        })
    };
    let refresh: Option<&mut crate::models::RefreshHook<'_, T, M>> =
        if cfg.regenerate_per_epoch { Some(&mut hook) } else { None };
    Ok(fit(initial, &augmented, val, train_cfg, &mut crate::models::PlainGradients, refresh)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "lowercase", deny_unknown_fields)]
pub enum EpsilonSchedule {
    Deterministic { epsilon: f64 },
    /// Uniform draw from `[low, high]`, fresh for every batch.
    Stochastic { low: f64, high: f64 },
}

impl EpsilonSchedule {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Deterministic { .. } => "DLPAT",
            Self::Stochastic { .. } => "SLPAT",
        }
    }
}

/// How an epsilon in data units becomes a parameter displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PerturbationScale {
    /// Every parameter moves by ε (BIM steps by α).
    Absolute,
    /// Each parameter tensor moves by `ε·mean|W|/range`, with α and the
    /// projection ball scaled the same way.
    LayerRelative { range: f64 },
}

impl Default for PerturbationScale {
    fn default() -> Self {
        Self::LayerRelative { range: 1.0 }
    }
}

impl PerturbationScale {
    /// Multiplier applied to ε and α for one parameter tensor.
    pub fn factor<T: Scalar>(&self, w: &Tensor<T>) -> T {
        match *self {
            Self::Absolute => T::one(),
            Self::LayerRelative { range } => {
                let n = w.data().len().max(1);
                let mean = w.data().iter().fold(T::zero(), |a, &v| a + v.abs()) / T::of(n as f64);
                mean / T::of(range)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpatConfig {
    pub attack: AttackKind,
    pub schedule: EpsilonSchedule,
    #[serde(default)]
    pub scale: PerturbationScale,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Replaces the scheduled iteration count in BIM mode.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default = "default_skip")]
    pub max_skip_fraction: f64,
}

fn default_skip() -> f64 {
    0.1
}

impl LpatConfig {
    pub fn deterministic(attack: AttackKind, epsilon: f64) -> Self {
        Self {
            attack,
            schedule: EpsilonSchedule::Deterministic { epsilon },
            alpha: DEFAULT_ALPHA,
            scale: PerturbationScale::default(),
            iterations: None,
            max_skip_fraction: default_skip(),
        }
    }

    pub fn stochastic(attack: AttackKind, low: f64, high: f64) -> Self {
        Self {
            schedule: EpsilonSchedule::Stochastic { low, high },
            ..Self::deterministic(attack, 0.0)
        }
    }

    /// A zero deterministic epsilon is accepted and reduces to plain training.
    pub fn validate(&self) -> Result<(), DefenseError> {
        match self.schedule {
            EpsilonSchedule::Deterministic { epsilon } if !(epsilon >= 0.0) || !epsilon.is_finite() => {
                return Err(DefenseError::Config(format!("epsilon must be non-negative, got {epsilon}")))
            }
            EpsilonSchedule::Stochastic { low, high } if !(0.0 < low && low < high && high.is_finite()) => {
                return Err(DefenseError::Config(format!("stochastic range [{low}, {high}] is invalid")))
            }
            _ => {}
        }
        if self.attack == AttackKind::Bim && !(self.alpha > 0.0) {
            return Err(DefenseError::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if let PerturbationScale::LayerRelative { range } = self.scale {
            if !(range > 0.0 && range.is_finite()) {
                return Err(DefenseError::Config(format!("perturbation range must be positive, got {range}")));
            }
        }
        if self.iterations == Some(0) {
            return Err(DefenseError::Config("iteration override must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_skip_fraction) {
            return Err(DefenseError::Config(format!(
                "skip fraction must lie in [0, 1], got {}",
                self.max_skip_fraction
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        self.schedule.label()
    }
}

/// Two-round gradient rule.
///
/// Round one differentiates the loss at the current parameters `W`. The
/// parameters are then pushed along the sign of those gradients (one step of
/// size ε, or BIM steps of size α kept inside `W ± ε`, both multiplied per
/// tensor by [`PerturbationScale::factor`]), round two
/// differentiates at the pushed parameters with the same dropout masks, and
/// the round-two gradients are returned for the update of `W`. The reported
/// loss is the round-one loss.
pub struct LpatGradients {
    cfg: LpatConfig,
    eps_rng: StreamRng,
    /// Epsilon used for each batch, in order.
    pub drawn: Vec<f64>,
}

impl LpatGradients {
    pub fn new(cfg: LpatConfig, streams: &Streams) -> Result<Self, DefenseError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            eps_rng: streams.stream("lpat/eps"),
            drawn: Vec::new(),
        })
    }

    fn next_epsilon(&mut self) -> f64 {
        let e = match self.cfg.schedule {
            EpsilonSchedule::Deterministic { epsilon } => epsilon,
            EpsilonSchedule::Stochastic { low, high } => self.eps_rng.random_range(low..=high),
        };
        self.drawn.push(e);
        e
    }
}

fn all_finite<T: Scalar>(ts: &[Tensor<T>]) -> bool {
    ts.iter().all(|t| t.is_finite())
}

fn is_non_finite(e: &ModelError) -> bool {
    matches!(e, ModelError::Autodiff(AutodiffError::NonFinite { .. }))
}

impl<T: Scalar, M: Forecaster<T>> BatchGradients<T, M> for LpatGradients {
    fn compute(
        &mut self,
        model: &M,
        inputs: &Tensor<T>,
        targets: &Tensor<T>,
        dropout: &mut StreamRng,
    ) -> Result<BatchOutcome<T>, ModelError> {
        let mut fresh = FreshMasks::new(dropout);
        let (loss, first) = loss_and_gradients(model, inputs, targets, &mut Mode::Train(&mut fresh))?;
        let masks = fresh.recorded;
        let eps = T::of(self.next_epsilon());

        let mut pushed = model.clone();
        let factors: Vec<T> = model.params().iter().map(|p| self.cfg.scale.factor(p)).collect();
        match self.cfg.attack {
            AttackKind::Fgsm => {
                for ((p, g), &f) in pushed.params_mut().into_iter().zip(&first).zip(&factors) {
                    let step = eps * f;
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w += step * d.signum0();
                    }
                }
            }
            AttackKind::Bim => {
                let steps = self
                    .cfg
                    .iterations
                    .unwrap_or_else(|| bim_iterations(eps.as_f64(), self.cfg.alpha));
                let alpha = T::of(self.cfg.alpha);
                let origin: Vec<Tensor<T>> = model.params().into_iter().cloned().collect();
                let mut grads = first;
                for step in 0..steps {
                    if step > 0 {
                        let mut replay = ReplayMasks::new(&masks);
                        grads = match loss_and_gradients(&pushed, inputs, targets, &mut Mode::Train(&mut replay)) {
                            Ok((_, g)) => g,
                            Err(e) if is_non_finite(&e) => return Ok(BatchOutcome::Skipped),
                            Err(e) => return Err(e),
                        };
                    }
                    for (((p, g), o), &f) in pushed.params_mut().into_iter().zip(&grads).zip(&origin).zip(&factors) {
                        let (a, r) = (alpha * f, eps * f);
                        for ((w, &d), &w0) in p.data_mut().iter_mut().zip(g.data()).zip(o.data()) {
                            let stepped = *w + a * d.signum0();
                            *w = (w0 + r).min((w0 - r).max(stepped));
                        }
                    }
                }
            }
        }
        if !pushed.params().iter().all(|p| p.is_finite()) {
            return Ok(BatchOutcome::Skipped);
        }

        let mut replay = ReplayMasks::new(&masks);
        match loss_and_gradients(&pushed, inputs, targets, &mut Mode::Train(&mut replay)) {
            Ok((second_loss, grads)) if second_loss.is_finite() && all_finite(&grads) => {
                Ok(BatchOutcome::Update { loss, grads })
            }
            Ok(_) => Ok(BatchOutcome::Skipped),
            Err(e) if is_non_finite(&e) => Ok(BatchOutcome::Skipped),
            Err(e) => Err(e),
        }
    }

    fn max_skip_fraction(&self) -> f64 {
        self.cfg.max_skip_fraction
    }
}

/// LPAT training; epsilon draws come from the `lpat/eps` stream of `train_cfg.seed`.
pub fn lpat_train<T: Scalar, M: Forecaster<T>>(
    model: M,
    train: &WindowedDataset<T>,
    val: Option<&WindowedDataset<T>>,
    cfg: &LpatConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome<T, M>, DefenseError> {
    let mut rule = LpatGradients::new(*cfg, &Streams::new(train_cfg.seed))?;
    Ok(fit(model, train, val, train_cfg, &mut rule, None)?)
}

/// `100·(attack − defended)/attack`.
pub fn percent_decrease(attack_rmse: f64, defended_rmse: f64) -> f64 {
    100.0 * (attack_rmse - defended_rmse) / attack_rmse
}

/// `100·(attacked − clean)/clean`.
pub fn percent_increase(clean_rmse: f64, attacked_rmse: f64) -> f64 {
    100.0 * (attacked_rmse - clean_rmse) / clean_rmse
}

/// RMSE of one model on one poisoned test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// `baseline` for the undefended model.
    pub model: String,
    pub attack: AttackKind,
    pub epsilon: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub attack: AttackKind,
    pub defense: String,
    pub epsilon: f64,
    pub attack_rmse: f64,
    pub defended_rmse: f64,
    pub percent_decrease: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseTable {
    pub rows: Vec<DefenseRow>,
}

impl DefenseTable {
    pub fn mean_decrease(&self, attack: AttackKind, defense: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.attack == attack && r.defense == defense)
            .map(|r| r.percent_decrease)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// `(ε, %decrease)` line for one defense under one attack.
    pub fn series(&self, attack: AttackKind, defense: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.attack == attack && r.defense == defense)
            .map(|r| (r.epsilon, r.percent_decrease))
            .collect()
    }
}

/// Builds the long-form %decrease table from measured RMSEs.
///
/// Every `(defense, attack, ε)` cell and every baseline `(attack, ε)` cell
/// must be present; absent ones are listed in the error.
pub fn tabulate_defenses(
    measurements: &[Measurement],
    attacks: &[AttackKind],
    defenses: &[String],
    grid: &[f64],
) -> Result<DefenseTable, DefenseError> {
    let find = |model: &str, a: AttackKind, e: f64| {
        measurements
            .iter()
            .find(|m| m.model == model && m.attack == a && m.epsilon == e)
            .map(|m| m.rmse)
    };
    let mut missing = Vec::new();
    let mut rows = Vec::new();
    for &a in attacks {
        for d in defenses {
            for &e in grid {
                match (find(BASELINE, a, e), find(d, a, e)) {
                    (Some(att), Some(def)) => rows.push(DefenseRow {
                        attack: a,
                        defense: d.clone(),
                        epsilon: e,
                        attack_rmse: att,
                        defended_rmse: def,
                        percent_decrease: percent_decrease(att, def),
                    }),
                    (att, def) => {
                        if att.is_none() {
                            missing.push((BASELINE.to_string(), a, e));
                        }
                        if def.is_none() {
                            missing.push((d.clone(), a, e));
                        }
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        missing.dedup();
        return Err(DefenseError::MissingCells(missing));
    }
    Ok(DefenseTable { rows })
}

pub const BASELINE: &str = "baseline";

/// Attacks the baseline on `test` once per `(attack, ε)` and evaluates every
/// model on those same poisoned sets.
pub fn defense_report<T: Scalar, M: Forecaster<T>>(
    baseline: &M,
    defended: &[(String, &M)],
    test: &WindowedDataset<T>,
    attacks: &[AttackConfig],
    grid: &[f64],
) -> Result<(DefenseTable, Vec<Measurement>), DefenseError> {
    let mut measurements = Vec::new();
    for template in attacks {
        for &eps in grid {
            let cfg = AttackConfig {
                epsilon: eps,
                alpha: template.alpha.min(eps),
                ..*template
            };
            let batch = attack(baseline, test.inputs(), test.targets(), &cfg)?;
            let poisoned = test.with_inputs(batch.perturbed, "poisoned")?;
            measurements.push(Measurement {
                model: BASELINE.into(),
                attack: cfg.kind,
                epsilon: eps,
                rmse: evaluate(baseline, &poisoned)?.as_f64(),
            });
            for (name, m) in defended {
                measurements.push(Measurement {
                    model: name.clone(),
                    attack: cfg.kind,
                    epsilon: eps,
                    rmse: evaluate(*m, &poisoned)?.as_f64(),
                });
            }
        }
    }
    let kinds: Vec<AttackKind> = attacks.iter().map(|a| a.kind).collect();
    let names: Vec<String> = defended.iter().map(|(n, _)| n.clone()).collect();
    let table = tabulate_defenses(&measurements, &kinds, &names, grid)?;
    Ok((table, measurements))
}
