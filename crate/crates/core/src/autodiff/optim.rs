use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed accumulators shaped like `params`.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Result<Self, AutodiffError> {
        if !(config.learning_rate > 0.0) {
            return Err(AutodiffError::Invalid(format!(
                "learning rate must be positive, got {}",
                config.learning_rate
            )));
        }
        let first: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        let second = first.clone();
        Ok(Self {
            config,
            first,
            second,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<(), AutodiffError> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(AutodiffError::Invalid(format!(
                "adam: expected {} parameter tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let b1 = T::of(self.config.beta1);
        let b2 = T::of(self.config.beta2);
        let lr = T::of(self.config.learning_rate);
        let eps = T::of(self.config.epsilon);
        let t = self.step as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Per-component value clipping into `[-threshold, threshold]`.
pub fn clip_gradients<T: Scalar>(grads: &mut [Tensor<T>], threshold: T) {
    assert!(threshold > T::zero(), "clip threshold must be positive");
    for g in grads {
        for c in g.data_mut() {
            *c = (*c).min(threshold).max(-threshold);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_within_band_is_identity() {
        let mut g = vec![Tensor::from_vec(vec![0.3, -0.2])];
        clip_gradients(&mut g, 0.5);
        assert_eq!(g[0].data(), &[0.3, -0.2]);
    }

    #[test]
    fn clip_saturates() {
        let mut g = vec![Tensor::from_vec(vec![0.9, -1.7])];
        clip_gradients(&mut g, 0.5);
        assert_eq!(g[0].data(), &[0.5, -0.5]);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = Tensor::from_vec(vec![1.0, -2.0]);
        let mut state = AdamState::new(AdamConfig::default(), [&p]).unwrap();
        state.step(&mut [&mut p], &[Tensor::from_vec(vec![1.0, 1.0])]).unwrap();
        let after_one = p.clone();
        let m1 = state.first_moments()[0].data()[0];
        state.step(&mut [&mut p], &[Tensor::zeros(&[2])]).unwrap();
        let m2 = state.first_moments()[0].data()[0];
        assert!(m2 < m1 && m2 > 0.0);
        // Zero gradient from a fresh state: nothing moves.
        let mut q = Tensor::from_vec(vec![1.0, -2.0]);
        let mut fresh = AdamState::new(AdamConfig::default(), [&q]).unwrap();
        fresh.step(&mut [&mut q], &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(q.data(), &[1.0, -2.0]);
        assert_eq!(fresh.step_count(), 1);
        assert_ne!(after_one.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::<f64>::scalar(0.0);
        let mut state = AdamState::new(AdamConfig::default(), [&p]).unwrap();
        state.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        assert!((p.item() + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let mut state = AdamState::new(AdamConfig::default(), [&p]).unwrap();
        let err = state.step(&mut [&mut p], &[Tensor::zeros(&[3])]).unwrap_err();
        assert!(matches!(err, AutodiffError::ShapeMismatch { op: "adam_step", .. }));
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        // f(w) = sum((w - c)^2), minimum at c.
        let c = [1.5, -0.75, 0.25];
        let mut w = Tensor::from_vec(vec![0.0; 3]);
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, [&w]).unwrap();
        for _ in 0..1000 {
            let g: Vec<f64> = w.data().iter().zip(&c).map(|(wi, ci)| 2.0 * (wi - ci)).collect();
            state.step(&mut [&mut w], &[Tensor::from_vec(g)]).unwrap();
        }
        for (wi, ci) in w.data().iter().zip(&c) {
            assert!((wi - ci).abs() < 1e-3, "{wi} vs {ci}");
        }
    }
}
