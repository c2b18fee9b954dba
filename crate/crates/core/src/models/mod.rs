//! LSTM forecasters and their training/evaluation loops.

mod checkpoint;
mod encdec;
mod forecast;
mod layers;
mod lstm;
mod train;
mod vanilla;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError, CheckpointHeader, CHECKPOINT_VERSION};
pub use encdec::EncDecLstmModel;
pub use forecast::{Architecture, ForecastModel, ModelKind};
pub use layers::Dense;
pub use lstm::{lstm_cell_step, LstmCellParams};
pub use train::{
    evaluate, fit, loss_and_gradients, predict, rmse, train, BatchGradients, BatchOutcome, EpochRecord, PlainGradients,
    RefreshHook,
    TrainConfig, TrainOutcome,
};
pub use vanilla::VanillaLstmModel;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::data::DataError;
use crate::rng::StreamRng;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("window must contain at least one time step")]
    EmptyWindow,
    #[error("expected {expected} input features, got {got}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("look-back mismatch: model repeats {expected} steps, window has {got}")]
    LookbackMismatch { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("{skipped} of {total} batches skipped after non-finite perturbation")]
    TooManySkipped { skipped: usize, total: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Supplies dropout masks during a training-mode forward pass.
pub trait MaskSource<T> {
    fn mask(&mut self, len: usize, rate: f64) -> Vec<T>;
}

/// Draws masks from a stream and remembers them for replay.
pub struct FreshMasks<'a, T> {
    rng: &'a mut StreamRng,
    pub recorded: Vec<Vec<T>>,
}

impl<'a, T> FreshMasks<'a, T> {
    pub fn new(rng: &'a mut StreamRng) -> Self {
        Self {
            rng,
            recorded: Vec::new(),
        }
    }
}

impl<T: Scalar> MaskSource<T> for FreshMasks<'_, T> {
    fn mask(&mut self, len: usize, rate: f64) -> Vec<T> {
        let m = crate::autodiff::dropout_mask(self.rng, len, rate);
        self.recorded.push(m.clone());
        m
    }
}

/// Replays masks recorded by [`FreshMasks`] in the same order.
pub struct ReplayMasks<'a, T> {
    masks: &'a [Vec<T>],
    cursor: usize,
}

impl<'a, T> ReplayMasks<'a, T> {
    pub fn new(masks: &'a [Vec<T>]) -> Self {
        Self { masks, cursor: 0 }
    }
}

impl<T: Scalar> MaskSource<T> for ReplayMasks<'_, T> {
    fn mask(&mut self, len: usize, _rate: f64) -> Vec<T> {
        let m = self.masks[self.cursor].clone();
        assert_eq!(m.len(), len, "replayed dropout mask has the wrong length");
        self.cursor += 1;
        m
    }
}

pub enum Mode<'a, T> {
    /// Dropout disabled.
    Eval,
    Train(&'a mut dyn MaskSource<T>),
}

impl<T: Scalar> Mode<'_, T> {
    pub(crate) fn dropout(&mut self, tape: &mut Tape<T>, x: Var, rate: f64) -> Result<Var, ModelError> {
        match self {
            Mode::Train(src) if rate > 0.0 => {
                let mask = src.mask(tape.value(x).numel(), rate);
                Ok(tape.dropout(x, mask)?)
            }
            _ => Ok(x),
        }
    }
}

/// Common surface of the forecasting architectures.
pub trait Forecaster<T: Scalar>: Clone + Send + Sync {
    /// Parameter tensors in their declared (checkpoint) order.
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;
    fn input_features(&self) -> usize;

    /// Maps a `[B, L, F]` input to `[B, O]` predictions.
    fn forward(&self, tape: &mut Tape<T>, input: Var, params: &[Var], mode: &mut Mode<'_, T>) -> Result<Var, ModelError>;

    /// Records the parameters as tape leaves, in declared order.
    fn record_params(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| tape.leaf(p.clone(), requires_grad))
            .collect()
    }

    /// Evaluation-mode predictions for a `[B, L, F]` batch.
    fn predict_batch(&self, inputs: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let params = self.record_params(&mut tape, false);
        let x = tape.constant(inputs.clone());
        let y = self.forward(&mut tape, x, &params, &mut Mode::Eval)?;
        Ok(tape.value(y).clone())
    }
}

pub(crate) fn window_dims<T: Scalar>(tape: &Tape<T>, input: Var, features: usize) -> Result<(usize, usize), ModelError> {
    match *tape.value(input).shape() {
        [_, 0, _] => Err(ModelError::EmptyWindow),
        [b, l, f] if f == features => Ok((b, l)),
        [_, _, f] => Err(ModelError::FeatureMismatch { expected: features, got: f }),
        ref s => Err(ModelError::Autodiff(AutodiffError::ShapeMismatch {
            op: "forward",
            left: s.to_vec(),
            right: vec![0, 0, features],
        })),
    }
}
