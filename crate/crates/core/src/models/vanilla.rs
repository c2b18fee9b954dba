use rand::Rng;

use super::layers::Dense;
use super::lstm::{unroll_on_tape, LstmCellParams, CELL_TENSORS};
use super::{window_dims, Forecaster, Mode, ModelError};
use crate::autodiff::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Single-layer LSTM followed by a ReLU layer, dropout and a linear one-unit head.
///
/// The prediction uses the hidden state after the last step of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaLstmModel<T> {
    pub cell: LstmCellParams<T>,
    pub hidden: Dense<T>,
    pub head: Dense<T>,
    pub dropout: f64,
}

impl<T: Scalar> VanillaLstmModel<T> {
    pub fn zeros(features: usize, hidden: usize, relu_units: usize, dropout: f64) -> Self {
        Self {
            cell: LstmCellParams::zeros(features, hidden),
            hidden: Dense::zeros(hidden, relu_units),
            head: Dense::zeros(relu_units, 1),
            dropout,
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, features: usize, hidden: usize, relu_units: usize, dropout: f64) -> Self {
        Self {
            cell: LstmCellParams::init(rng, features, hidden),
            hidden: Dense::init(rng, hidden, relu_units),
            head: Dense::init(rng, relu_units, 1),
            dropout,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.cell.hidden()
    }

    pub fn relu_units(&self) -> usize {
        self.hidden.outputs()
    }
}

impl<T: Scalar> Forecaster<T> for VanillaLstmModel<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut v: Vec<&Tensor<T>> = self.cell.params().to_vec();
        v.extend(self.hidden.params());
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v: Vec<&mut Tensor<T>> = self.cell.params_mut().into_iter().collect();
        v.extend(self.hidden.params_mut());
        v.extend(self.head.params_mut());
        v
    }

    fn input_features(&self) -> usize {
        self.cell.inputs()
    }

    fn forward(&self, tape: &mut Tape<T>, input: Var, params: &[Var], mode: &mut Mode<'_, T>) -> Result<Var, ModelError> {
        window_dims(tape, input, self.input_features())?;
        let (s, _) = unroll_on_tape(tape, input, &params[..CELL_TENSORS])?;
        let pre = Dense::apply(tape, s, &params[CELL_TENSORS..CELL_TENSORS + 2])?;
        let h = tape.relu(pre)?;
        let h = mode.dropout(tape, h, self.dropout)?;
        Dense::apply(tape, h, &params[CELL_TENSORS + 2..CELL_TENSORS + 4])
    }
}
