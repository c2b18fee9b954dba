//! Small LSTM forecasters trained from scratch, gradient-sign evasion attacks
//! against them (FGSM, BIM) and two adversarial-training defenses (DAAT, LPAT).
//!
//! The numeric core is generic over [`Scalar`]; the aliases below fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod autodiff;
pub mod data;
pub mod defenses;
pub mod experiment;
pub mod models;
pub mod rng;
pub mod scalar;

pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type AdamState = autodiff::AdamState<f64>;
pub type WindowedDataset = data::WindowedDataset<f64>;
pub type ForecastModel = models::ForecastModel<f64>;
pub type VanillaLstmModel = models::VanillaLstmModel<f64>;
pub type EncDecLstmModel = models::EncDecLstmModel<f64>;
pub type LstmCellParams = models::LstmCellParams<f64>;
