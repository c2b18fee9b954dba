//! Standard LSTM cell.
//!
//! ```text
//! f = σ(x X_f + s Z_f + b_f)      forget gate
//! j = σ(x X_j + s Z_j + b_j)      input gate
//! k = tanh(x X_k + s Z_k + b_k)   candidate
//! c' = f ∘ c + j ∘ k
//! o = σ(x X_o + s Z_o + b_o)
//! s' = tanh(c') ∘ o
//! ```

use rand::Rng;

use super::layers::uniform_weight;
use super::ModelError;
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Eight weight matrices and four biases of one LSTM cell.
///
/// Input weights are `[F, H]`, recurrent weights `[H, H]`, biases `[H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams<T> {
    pub x_f: Tensor<T>,
    pub z_f: Tensor<T>,
    pub b_f: Tensor<T>,
    pub x_j: Tensor<T>,
    pub z_j: Tensor<T>,
    pub b_j: Tensor<T>,
    pub x_k: Tensor<T>,
    pub z_k: Tensor<T>,
    pub b_k: Tensor<T>,
    pub x_o: Tensor<T>,
    pub z_o: Tensor<T>,
    pub b_o: Tensor<T>,
}

pub(crate) const CELL_TENSORS: usize = 12;

impl<T: Scalar> LstmCellParams<T> {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        let x = || Tensor::zeros(&[inputs, hidden]);
        let z = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        Self {
            x_f: x(),
            z_f: z(),
            b_f: b(),
            x_j: x(),
            z_j: z(),
            b_j: b(),
            x_k: x(),
            z_k: z(),
            b_k: b(),
            x_o: x(),
            z_o: z(),
            b_o: b(),
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, inputs: usize, hidden: usize) -> Self {
        let mut p = Self::zeros(inputs, hidden);
        for gate in 0..4 {
            let x = uniform_weight(rng, inputs, hidden);
            let z = uniform_weight(rng, hidden, hidden);
            let (xs, zs) = match gate {
                0 => (&mut p.x_f, &mut p.z_f),
                1 => (&mut p.x_j, &mut p.z_j),
                2 => (&mut p.x_k, &mut p.z_k),
                _ => (&mut p.x_o, &mut p.z_o),
            };
            *xs = x;
            *zs = z;
        }
        p
    }

    pub fn inputs(&self) -> usize {
        self.x_f.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.x_f.shape()[1]
    }

    pub(crate) fn params(&self) -> [&Tensor<T>; CELL_TENSORS] {
        [
            &self.x_f, &self.z_f, &self.b_f, &self.x_j, &self.z_j, &self.b_j, &self.x_k, &self.z_k, &self.b_k,
            &self.x_o, &self.z_o, &self.b_o,
        ]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Tensor<T>; CELL_TENSORS] {
        [
            &mut self.x_f,
            &mut self.z_f,
            &mut self.b_f,
            &mut self.x_j,
            &mut self.z_j,
            &mut self.b_j,
            &mut self.x_k,
            &mut self.z_k,
            &mut self.b_k,
            &mut self.x_o,
            &mut self.z_o,
            &mut self.b_o,
        ]
    }

    /// Runs the cell over every step of a `[B, L, F]` input from zero state, returning final `(s, c)`.
    pub fn unroll(&self, inputs: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params().into_iter().map(|p| tape.leaf(p.clone(), false)).collect();
        let x = tape.constant(inputs.clone());
        let (s, c) = unroll_on_tape(&mut tape, x, &vars)?;
        Ok((tape.value(s).clone(), tape.value(c).clone()))
    }
}

fn gate<T: Scalar>(tape: &mut Tape<T>, x: Var, s: Var, w: &[Var]) -> Result<Var, AutodiffError> {
    let a = tape.matmul(x, w[0])?;
    let b = tape.matmul(s, w[1])?;
    let ab = tape.add(a, b)?;
    tape.add_bias(ab, w[2])
}

/// One cell step on the tape; `vars` are the recorded cell parameters in declared order.
pub(crate) fn cell_step_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &[Var],
    x: Var,
    s_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var), AutodiffError> {
    let f_pre = gate(tape, x, s_prev, &vars[0..3])?;
    let f = tape.sigmoid(f_pre)?;
    let j_pre = gate(tape, x, s_prev, &vars[3..6])?;
    let j = tape.sigmoid(j_pre)?;
    let k_pre = gate(tape, x, s_prev, &vars[6..9])?;
    let k = tape.tanh(k_pre)?;
    let o_pre = gate(tape, x, s_prev, &vars[9..12])?;
    let o = tape.sigmoid(o_pre)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(j, k)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let s = tape.mul(tc, o)?;
    Ok((s, c))
}

pub(crate) fn zero_state<T: Scalar>(tape: &mut Tape<T>, batch: usize, hidden: usize) -> (Var, Var) {
    let s = tape.constant(Tensor::zeros(&[batch, hidden]));
    let c = tape.constant(Tensor::zeros(&[batch, hidden]));
    (s, c)
}

/// Unrolls over the `[B, L, F]` input `x` from zero state.
pub(crate) fn unroll_on_tape<T: Scalar>(tape: &mut Tape<T>, x: Var, vars: &[Var]) -> Result<(Var, Var), ModelError> {
    let (b, l) = match *tape.value(x).shape() {
        [_, 0, _] => return Err(ModelError::EmptyWindow),
        [b, l, _] => (b, l),
        ref s => {
            return Err(ModelError::Autodiff(AutodiffError::ShapeMismatch {
                op: "lstm_unroll",
                left: s.to_vec(),
                right: vec![],
            }))
        }
    };
    let hidden = tape.value(vars[0]).shape()[1];
    let (mut s, mut c) = zero_state(tape, b, hidden);
    for t in 0..l {
        let xt = tape.time_step(x, t)?;
        (s, c) = cell_step_on_tape(tape, vars, xt, s, c)?;
    }
    Ok((s, c))
}

fn as_2d<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    match t.shape() {
        [n] => t.clone().reshape(vec![1, *n]).expect("row"),
        _ => t.clone(),
    }
}

/// Single LSTM step on concrete values: `x_t` is `[B, F]` (or `[F]`), states are `[B, H]` (or `[H]`).
pub fn lstm_cell_step<T: Scalar>(
    x_t: &Tensor<T>,
    s_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
    params: &LstmCellParams<T>,
) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.params().into_iter().map(|p| tape.leaf(p.clone(), false)).collect();
    let x = tape.constant(as_2d(x_t));
    let s = tape.constant(as_2d(s_prev));
    let c = tape.constant(as_2d(c_prev));
    let (s1, c1) = cell_step_on_tape(&mut tape, &vars, x, s, c)?;
    Ok((tape.value(s1).clone(), tape.value(c1).clone()))
}
