use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
        }
    }
}

/// First and second moment estimates for one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }
}

/// One bias-corrected ADAM update in place.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, config: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.m.len() != state.v.len() {
        return Err(Error::Shape(format!(
            "ADAM buffers of {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let (b1, b2) = (T::lit(config.beta1), T::lit(config.beta2));
    let t = state.step as i32;
    let c1 = T::one() - T::lit(config.beta1.powi(t));
    let c2 = T::one() - T::lit(config.beta2.powi(t));
    let lr = T::lit(config.learning_rate);
    let eps = T::lit(ADAM_EPS);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// ADAM over every parameter tensor of a network, using their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        Self {
            config,
            states: params.iter().map(|p| AdamState::new(p.len())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step)
    }

    pub fn step(&mut self, params: Vec<&mut Tensor<T>>) -> Result<()> {
        if params.len() != self.states.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors for {} optimizer states",
                params.len(),
                self.states.len()
            )));
        }
        for (p, state) in params.into_iter().zip(&mut self.states) {
            let grad = p.grad.take().unwrap_or_else(|| vec![T::zero(); p.len()]);
            let result = adam_step(p.data_mut(), &grad, state, &self.config);
            p.grad = Some(grad);
            result?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_learning_rate_times_sign() {
        let config = AdamConfig::default();
        for g in [1e-6, -3.0, 0.25, -1e3] {
            let mut p = [0.5f64];
            let mut s = AdamState::new(1);
            adam_step(&mut p, &[g], &mut s, &config).unwrap();
            let update = p[0] - 0.5;
            assert_eq!(update.signum(), -g.signum());
            assert!(update.abs() <= config.learning_rate && update.abs() >= 0.99 * config.learning_rate);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = [0.5f64, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, [0.5, -2.0]);
        assert!(adam_step(&mut p, &[0.0], &mut s, &AdamConfig::default()).is_err());
    }

    #[test]
    fn minimizes_a_parabola() {
        let config = AdamConfig {
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut x = [1.0f64];
        let mut s = AdamState::new(1);
        let mut last = 1.0f64;
        for _ in 0..100 {
            let g = 2.0 * x[0];
            adam_step(&mut x, &[g], &mut s, &config).unwrap();
            assert!(x[0].abs() < last);
            last = x[0].abs();
        }
        assert!(last < 0.5);
    }
}
