use rand::Rng;

use super::ModelError;
use crate::autodiff::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` matrix of shape `[fan_in, fan_out]`.
pub(crate) fn uniform_weight<T: Scalar, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("weight shape")
}

/// Fully connected layer `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: uniform_weight(rng, inputs, outputs),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub(crate) fn params(&self) -> [&Tensor<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Tensor<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    /// `vars` are this layer's recorded `[weight, bias]`.
    pub(crate) fn apply(tape: &mut Tape<T>, x: Var, vars: &[Var]) -> Result<Var, ModelError> {
        let xw = tape.matmul(x, vars[0])?;
        Ok(tape.add_bias(xw, vars[1])?)
    }
}
