use rand::Rng;

use super::layers::Dense;
use super::lstm::{cell_step_on_tape, unroll_on_tape, zero_state, LstmCellParams, CELL_TENSORS};
use super::{window_dims, Forecaster, Mode, ModelError};
use crate::autodiff::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Encoder-decoder LSTM producing one value per window step.
///
/// The encoder's final hidden state (the context vector) is fed to the
/// decoder as its input at each of `repeat` steps; every decoder hidden state
/// passes through the same ReLU layer, dropout and linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncDecLstmModel<T> {
    pub encoder: LstmCellParams<T>,
    pub decoder: LstmCellParams<T>,
    pub hidden: Dense<T>,
    pub head: Dense<T>,
    pub repeat: usize,
    pub dropout: f64,
}

impl<T: Scalar> EncDecLstmModel<T> {
    pub fn zeros(features: usize, hidden: usize, relu_units: usize, repeat: usize, dropout: f64) -> Self {
        Self {
            encoder: LstmCellParams::zeros(features, hidden),
            decoder: LstmCellParams::zeros(hidden, hidden),
            hidden: Dense::zeros(hidden, relu_units),
            head: Dense::zeros(relu_units, 1),
            repeat,
            dropout,
        }
    }

    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        features: usize,
        hidden: usize,
        relu_units: usize,
        repeat: usize,
        dropout: f64,
    ) -> Self {
        Self {
            encoder: LstmCellParams::init(rng, features, hidden),
            decoder: LstmCellParams::init(rng, hidden, hidden),
            hidden: Dense::init(rng, hidden, relu_units),
            head: Dense::init(rng, relu_units, 1),
            repeat,
            dropout,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.encoder.hidden()
    }

    pub fn relu_units(&self) -> usize {
        self.hidden.outputs()
    }

    /// Final encoder hidden state for a `[B, L, F]` batch.
    pub fn context_vector(&self, inputs: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        Ok(self.encoder.unroll(inputs)?.0)
    }
}

impl<T: Scalar> Forecaster<T> for EncDecLstmModel<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut v: Vec<&Tensor<T>> = self.encoder.params().to_vec();
        v.extend(self.decoder.params());
        v.extend(self.hidden.params());
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v: Vec<&mut Tensor<T>> = self.encoder.params_mut().into_iter().collect();
        v.extend(self.decoder.params_mut());
        v.extend(self.hidden.params_mut());
        v.extend(self.head.params_mut());
        v
    }

    fn input_features(&self) -> usize {
        self.encoder.inputs()
    }

    fn forward(&self, tape: &mut Tape<T>, input: Var, params: &[Var], mode: &mut Mode<'_, T>) -> Result<Var, ModelError> {
        let (b, l) = window_dims(tape, input, self.input_features())?;
        if l != self.repeat {
            return Err(ModelError::LookbackMismatch {
                expected: self.repeat,
                got: l,
            });
        }
        let enc = &params[..CELL_TENSORS];
        let dec = &params[CELL_TENSORS..2 * CELL_TENSORS];
        let dense = &params[2 * CELL_TENSORS..2 * CELL_TENSORS + 2];
        let head = &params[2 * CELL_TENSORS + 2..2 * CELL_TENSORS + 4];

        let (context, _) = unroll_on_tape(tape, input, enc)?;
        let (mut s, mut c) = zero_state(tape, b, self.hidden_size());
        let mut outputs = Vec::with_capacity(self.repeat);
        for _ in 0..self.repeat {
            (s, c) = cell_step_on_tape(tape, dec, context, s, c)?;
            let pre = Dense::apply(tape, s, dense)?;
            let h = tape.relu(pre)?;
            let h = mode.dropout(tape, h, self.dropout)?;
            outputs.push(Dense::apply(tape, h, head)?);
        }
        Ok(tape.concat_cols(&outputs)?)
    }
}
