use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Forecaster, FreshMasks, Mode, ModelError};
use crate::autodiff::{clip_gradients, AdamConfig, AdamState, AutodiffError, Tape, Tensor};
use crate::data::WindowedDataset;
use crate::rng::{StreamRng, Streams};
use crate::scalar::Scalar;

const PREDICT_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Per-component gradient clip threshold.
    pub clip: Option<f64>,
    /// Early-stopping patience in epochs, measured on validation RMSE.
    pub patience: Option<usize>,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            clip: None,
            patience: Some(10),
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(ModelError::Config(format!("clip threshold must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode MSE over the epoch's batches, weighted by batch size.
    pub train_loss: f64,
    pub train_rmse: f64,
    pub val_rmse: Option<f64>,
    pub skipped_batches: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T, M> {
    pub model: M,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub skipped_batches: usize,
    pub total_batches: usize,
    _scalar: std::marker::PhantomData<T>,
}

pub enum BatchOutcome<T> {
    Update { loss: T, grads: Vec<Tensor<T>> },
    /// The batch produced a non-finite intermediate and is dropped.
    Skipped,
}

/// How a training batch turns into parameter gradients.
pub trait BatchGradients<T: Scalar, M: Forecaster<T>> {
    fn compute(
        &mut self,
        model: &M,
        inputs: &Tensor<T>,
        targets: &Tensor<T>,
        dropout: &mut StreamRng,
    ) -> Result<BatchOutcome<T>, ModelError>;

    /// Largest tolerated fraction of skipped batches.
    fn max_skip_fraction(&self) -> f64 {
        0.0
    }
}

/// Ordinary one-pass gradients.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlainGradients;

impl<T: Scalar, M: Forecaster<T>> BatchGradients<T, M> for PlainGradients {
    fn compute(
        &mut self,
        model: &M,
        inputs: &Tensor<T>,
        targets: &Tensor<T>,
        dropout: &mut StreamRng,
    ) -> Result<BatchOutcome<T>, ModelError> {
        let mut masks = FreshMasks::new(dropout);
        let (loss, grads) = loss_and_gradients(model, inputs, targets, &mut Mode::Train(&mut masks))?;
        Ok(BatchOutcome::Update { loss, grads })
    }
}

/// MSE of one batch and its gradient for every parameter, in declared order.
pub fn loss_and_gradients<T: Scalar, M: Forecaster<T>>(
    model: &M,
    inputs: &Tensor<T>,
    targets: &Tensor<T>,
    mode: &mut Mode<'_, T>,
) -> Result<(T, Vec<Tensor<T>>), ModelError> {
    let mut tape = Tape::new();
    let params = model.record_params(&mut tape, true);
    let x = tape.constant(inputs.clone());
    let y = tape.constant(targets.clone());
    let pred = model.forward(&mut tape, x, &params, mode)?;
    let loss = tape.mse(pred, y)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((value, params.iter().map(|&p| grads.wrt(p)).collect()))
}

/// Evaluation-mode predictions for every window, `[N, O]`.
pub fn predict<T: Scalar, M: Forecaster<T>>(model: &M, data: &WindowedDataset<T>) -> Result<Tensor<T>, ModelError> {
    predict_inputs(model, data.inputs())
}

pub(crate) fn predict_inputs<T: Scalar, M: Forecaster<T>>(model: &M, inputs: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
    let (n, l, f) = match *inputs.shape() {
        [n, l, f] => (n, l, f),
        ref s => {
            return Err(ModelError::Autodiff(AutodiffError::ShapeMismatch {
                op: "predict",
                left: s.to_vec(),
                right: vec![0, 0, model.input_features()],
            }))
        }
    };
    if n == 0 {
        return Err(ModelError::EmptyDataset);
    }
    let w = l * f;
    let mut out = Vec::new();
    let mut width = 0;
    for start in (0..n).step_by(PREDICT_CHUNK) {
        let end = (start + PREDICT_CHUNK).min(n);
        let chunk = Tensor::new(vec![end - start, l, f], inputs.data()[start * w..end * w].to_vec())?;
        let y = model.predict_batch(&chunk)?;
        width = y.shape()[1];
        out.extend_from_slice(y.data());
    }
    Ok(Tensor::new(vec![n, width], out)?)
}

/// Root mean squared error over every element.
pub fn rmse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T, ModelError> {
    if pred.shape() != target.shape() {
        return Err(ModelError::Autodiff(AutodiffError::ShapeMismatch {
            op: "rmse",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        }));
    }
    if pred.numel() == 0 {
        return Err(ModelError::EmptyDataset);
    }
    let sse: T = pred.data().iter().zip(target.data()).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok((sse / T::of(pred.numel() as f64)).sqrt())
}

/// RMSE of evaluation-mode predictions over all outputs of all windows.
pub fn evaluate<T: Scalar, M: Forecaster<T>>(model: &M, data: &WindowedDataset<T>) -> Result<T, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    rmse(&predict(model, data)?, data.targets())
}

/// Plain mini-batch Adam training.
pub fn train<T: Scalar, M: Forecaster<T>>(
    model: M,
    train: &WindowedDataset<T>,
    val: Option<&WindowedDataset<T>>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T, M>, ModelError> {
    fit(model, train, val, cfg, &mut PlainGradients, None)
}

/// Called before every epoch after the first; may replace the training set.
pub type RefreshHook<'a, T, M> = dyn FnMut(usize, &M) -> Result<Option<WindowedDataset<T>>, ModelError> + 'a;

/// Mini-batch training with a pluggable gradient rule.
///
/// Shuffling and dropout draw from the `train/shuffle` and `train/dropout`
/// streams of `cfg.seed`. With a validation set and a patience, training stops
/// once validation RMSE has not improved for `patience` epochs and the best
/// parameters are returned.
pub fn fit<T: Scalar, M: Forecaster<T>>(
    mut model: M,
    train: &WindowedDataset<T>,
    val: Option<&WindowedDataset<T>>,
    cfg: &TrainConfig,
    rule: &mut dyn BatchGradients<T, M>,
    mut refresh: Option<&mut RefreshHook<'_, T, M>>,
) -> Result<TrainOutcome<T, M>, ModelError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if train.n_features() != model.input_features() {
        return Err(ModelError::FeatureMismatch {
            expected: model.input_features(),
            got: train.n_features(),
        });
    }
    let streams = Streams::new(cfg.seed);
    let mut shuffle_rng = streams.stream("train/shuffle");
    let mut dropout_rng = streams.stream("train/dropout");
    let mut adam = AdamState::new(cfg.adam(), model.params())?;
    let clip = cfg.clip.map(T::of);

    let mut replaced: Option<WindowedDataset<T>> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, M)> = None;
    let mut skipped_total = 0;
    let mut batches_total = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        if epoch > 0 {
            if let Some(hook) = refresh.as_mut() {
                if let Some(fresh) = hook(epoch, &model)? {
                    replaced = Some(fresh);
                }
            }
        }
        let data = replaced.as_ref().unwrap_or(train);
        let mut order: Vec<usize> = (0..data.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        let mut counted = 0usize;
        let mut skipped = 0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.gather(idx);
            batches_total += 1;
            let outcome = rule
                .compute(&model, &x, &y, &mut dropout_rng)
                .map_err(|e| non_finite_as_loss(e, epoch, batch))?;
            match outcome {
                BatchOutcome::Update { loss, mut grads } => {
                    if !loss.is_finite() {
                        return Err(ModelError::NonFiniteLoss { epoch, batch });
                    }
                    if let Some(c) = clip {
                        clip_gradients(&mut grads, c);
                    }
                    adam.step(&mut model.params_mut(), &grads)?;
                    loss_sum += loss.as_f64() * idx.len() as f64;
                    counted += idx.len();
                }
                BatchOutcome::Skipped => {
                    skipped += 1;
                    skipped_total += 1;
                    log::warn!("epoch {epoch} batch {batch}: non-finite perturbation, batch skipped");
                }
            }
        }
        if skipped_total as f64 > rule.max_skip_fraction() * batches_total as f64 {
            return Err(ModelError::TooManySkipped {
                skipped: skipped_total,
                total: batches_total,
            });
        }
        let train_loss = if counted > 0 { loss_sum / counted as f64 } else { f64::NAN };
        let val_rmse = match val {
            Some(v) => Some(evaluate(&model, v)?.as_f64()),
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            train_rmse: train_loss.sqrt(),
            val_rmse,
            skipped_batches: skipped,
        });
        log::debug!("epoch {epoch}: train loss {train_loss:.6}, val rmse {val_rmse:?}");

        if let (Some(v), Some(patience)) = (val_rmse, cfg.patience) {
            let improved = best.as_ref().is_none_or(|(b, _, _)| v < *b);
            if improved {
                best = Some((v, epoch, model.clone()));
            } else if epoch - best.as_ref().map_or(0, |b| b.1) >= patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, history.len() - 1),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        stopped_early,
        skipped_batches: skipped_total,
        total_batches: batches_total,
        _scalar: std::marker::PhantomData,
    })
}

fn non_finite_as_loss(e: ModelError, epoch: usize, batch: usize) -> ModelError {
    match e {
        ModelError::Autodiff(AutodiffError::NonFinite { .. }) => ModelError::NonFiniteLoss { epoch, batch },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Provenance, WindowStamp};
    use crate::models::{Architecture, ForecastModel, ModelKind};

    fn dataset(inputs: Vec<f64>, targets: Vec<f64>, n: usize, l: usize, f: usize, o: usize) -> WindowedDataset<f64> {
        WindowedDataset::new(
            Tensor::new(vec![n, l, f], inputs).unwrap(),
            Tensor::new(vec![n, o], targets).unwrap(),
            (0..f).map(|i| format!("f{i}")).collect(),
            (0..n)
                .map(|i| WindowStamp {
                    input_start: day(i),
                    input_end: day(i + l - 1),
                    target: Some(day(i + l)),
                    segment: 0,
                })
                .collect(),
            Provenance {
                source: "test".into(),
                split: "train".into(),
            },
        )
        .unwrap()
    }

    fn day(i: usize) -> chrono::NaiveDateTime {
        chrono::DateTime::from_timestamp(i as i64 * 86_400, 0).unwrap().naive_utc()
    }

    fn arch(kind: ModelKind, lookback: usize) -> Architecture {
        Architecture {
            kind,
            input_features: 2,
            hidden: 6,
            relu_units: 6,
            lookback,
            dropout: 0.0,
        }
    }

    #[test]
    fn rmse_of_known_pairs() {
        let p = Tensor::from_vec(vec![0.0, 0.0]);
        let t = Tensor::from_vec(vec![3.0, 4.0]);
        assert!((rmse(&p, &t).unwrap() - (12.5f64).sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let m = ForecastModel::<f64>::new(&arch(ModelKind::Vanilla, 3), &Streams::new(1)).unwrap();
        let d = dataset(vec![], vec![], 0, 3, 2, 1);
        assert!(matches!(evaluate(&m, &d), Err(ModelError::EmptyDataset)));
        assert!(matches!(
            train(m, &d, None, &TrainConfig::default()),
            Err(ModelError::EmptyDataset)
        ));
    }

    #[test]
    fn constant_series_is_learned() {
        let n = 64;
        let d = dataset(vec![0.4; n * 3 * 2], vec![0.4; n], n, 3, 2, 1);
        let m = ForecastModel::<f64>::new(&arch(ModelKind::Vanilla, 3), &Streams::new(3)).unwrap();
        let cfg = TrainConfig {
            epochs: 300,
            learning_rate: 0.01,
            patience: None,
            ..TrainConfig::default()
        };
        let out = train(m, &d, None, &cfg).unwrap();
        assert!(evaluate(&out.model, &d).unwrap() < 1e-3);
    }

    #[test]
    fn same_seed_same_history() {
        let n = 40;
        let xs: Vec<f64> = (0..n * 3 * 2).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        let ys: Vec<f64> = (0..n).map(|i| xs[i * 6 + 4] * 0.5 + 0.1).collect();
        let d = dataset(xs, ys, n, 3, 2, 1);
        let a = Architecture {
            dropout: 0.2,
            ..arch(ModelKind::Vanilla, 3)
        };
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let m = ForecastModel::<f64>::new(&a, &Streams::new(9)).unwrap();
            train(m, &d, Some(&d), &cfg).unwrap().history
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn early_stopping_returns_best_epoch() {
        let n = 16;
        let d = dataset(vec![0.2; n * 3 * 2], vec![0.7; n], n, 3, 2, 1);
        let v = dataset(vec![0.2; 3 * 2], vec![-5.0], 1, 3, 2, 1);
        let m = ForecastModel::<f64>::new(&arch(ModelKind::Vanilla, 3), &Streams::new(5)).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 0.01,
            patience: Some(3),
            ..TrainConfig::default()
        };
        let out = train(m, &d, Some(&v), &cfg).unwrap();
        assert!(out.stopped_early);
        let best = out.history[out.best_epoch].val_rmse.unwrap();
        assert!(out.history.iter().all(|r| r.val_rmse.unwrap() >= best));
        assert_eq!(evaluate(&out.model, &v).unwrap(), best);
    }

    #[test]
    fn sequence_model_trains() {
        let n = 24;
        let xs: Vec<f64> = (0..n * 4 * 2).map(|i| (i % 9) as f64 / 9.0).collect();
        let ys: Vec<f64> = (0..n * 4).map(|i| (i % 4) as f64 / 4.0).collect();
        let d = dataset(xs, ys, n, 4, 2, 4);
        let m = ForecastModel::<f64>::new(&arch(ModelKind::EncoderDecoder, 4), &Streams::new(2)).unwrap();
        let before = evaluate(&m, &d).unwrap();
        let cfg = TrainConfig {
            epochs: 60,
            learning_rate: 0.01,
            clip: Some(0.5),
            patience: None,
            ..TrainConfig::default()
        };
        let out = train(m, &d, None, &cfg).unwrap();
        assert!(out.history.iter().all(|r| r.train_loss.is_finite()));
        assert!(evaluate(&out.model, &d).unwrap() <= 0.5 * before);
    }
}
