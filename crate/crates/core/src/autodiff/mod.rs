//! Reverse-mode automatic differentiation over small dense arrays, plus the
//! optimizer and clipping used by the training loops.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_gradient, relative_error};
pub use optim::{clip_gradients, AdamConfig, AdamState};
pub use tape::{dropout_mask, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("tensor shape {shape:?} needs {expected} values, got {actual}")]
    BadLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tape has already been consumed by a backward pass")]
    TapeConsumed,
    #[error("tape is empty")]
    EmptyTape,
    #[error("{0}")]
    Invalid(String),
}
