use serde::{Deserialize, Serialize};

use super::{EncDecLstmModel, Forecaster, Mode, ModelError, VanillaLstmModel};
use crate::autodiff::{Tape, Tensor, Var};
use crate::rng::Streams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Vanilla,
    EncoderDecoder,
}

/// Everything needed to rebuild a model's shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ModelKind,
    pub input_features: usize,
    pub hidden: usize,
    pub relu_units: usize,
    /// Window length; the decoder's repeat count for encoder-decoder models.
    pub lookback: usize,
    pub dropout: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_features == 0 || self.hidden == 0 || self.relu_units == 0 || self.lookback == 0 {
            return Err(ModelError::Config(format!("architecture dimensions must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Either architecture behind one type, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ForecastModel<T> {
    Vanilla(VanillaLstmModel<T>),
    EncDec(EncDecLstmModel<T>),
}

impl<T: Scalar> ForecastModel<T> {
    /// Freshly initialized model drawing from the `init` stream of `streams`.
    pub fn new(arch: &Architecture, streams: &Streams) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut rng = streams.stream("init");
        Ok(match arch.kind {
            ModelKind::Vanilla => Self::Vanilla(VanillaLstmModel::init(
                &mut rng,
                arch.input_features,
                arch.hidden,
                arch.relu_units,
                arch.dropout,
            )),
            ModelKind::EncoderDecoder => Self::EncDec(EncDecLstmModel::init(
                &mut rng,
                arch.input_features,
                arch.hidden,
                arch.relu_units,
                arch.lookback,
                arch.dropout,
            )),
        })
    }

    /// All-zero parameters with the given shape.
    pub fn zeros(arch: &Architecture) -> Result<Self, ModelError> {
        arch.validate()?;
        Ok(match arch.kind {
            ModelKind::Vanilla => {
                Self::Vanilla(VanillaLstmModel::zeros(arch.input_features, arch.hidden, arch.relu_units, arch.dropout))
            }
            ModelKind::EncoderDecoder => Self::EncDec(EncDecLstmModel::zeros(
                arch.input_features,
                arch.hidden,
                arch.relu_units,
                arch.lookback,
                arch.dropout,
            )),
        })
    }

    /// Shape descriptor; for vanilla models `lookback` is the given window length.
    pub fn architecture(&self, lookback: usize) -> Architecture {
        match self {
            Self::Vanilla(m) => Architecture {
                kind: ModelKind::Vanilla,
                input_features: m.input_features(),
                hidden: m.hidden_size(),
                relu_units: m.relu_units(),
                lookback,
                dropout: m.dropout,
            },
            Self::EncDec(m) => Architecture {
                kind: ModelKind::EncoderDecoder,
                input_features: m.input_features(),
                hidden: m.hidden_size(),
                relu_units: m.relu_units(),
                lookback: m.repeat,
                dropout: m.dropout,
            },
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Vanilla(_) => ModelKind::Vanilla,
            Self::EncDec(_) => ModelKind::EncoderDecoder,
        }
    }
}

impl<T: Scalar> Forecaster<T> for ForecastModel<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Self::Vanilla(m) => m.params(),
            Self::EncDec(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Self::Vanilla(m) => m.params_mut(),
            Self::EncDec(m) => m.params_mut(),
        }
    }

    fn input_features(&self) -> usize {
        match self {
            Self::Vanilla(m) => m.input_features(),
            Self::EncDec(m) => m.input_features(),
        }
    }

    fn forward(&self, tape: &mut Tape<T>, input: Var, params: &[Var], mode: &mut Mode<'_, T>) -> Result<Var, ModelError> {
        match self {
            Self::Vanilla(m) => m.forward(tape, input, params, mode),
            Self::EncDec(m) => m.forward(tape, input, params, mode),
        }
    }
}
