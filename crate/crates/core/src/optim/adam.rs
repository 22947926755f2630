use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ParamStore;

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

/// One bias-corrected Adam update of a flat parameter slice. `step` is the
/// 1-based update count.
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    cfg: &AdamConfig,
) {
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(step as i32));
    let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(step as i32));
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let eps = T::from_f64_lossy(cfg.epsilon);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Moment estimates for every trainable tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step_count: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = |p: &crate::tensor::Param<T>| {
            vec![T::zero(); if p.trainable { p.value.len() } else { 0 }]
        };
        Self {
            config,
            step_count: 0,
            m: store.iter().map(zeros).collect(),
            v: store.iter().map(zeros).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<T>] {
        &self.v
    }

    /// Applies one update from the gradients held in `store`. Gradients are
    /// left untouched; the caller zeroes them.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for (i, p) in store.iter().enumerate() {
            if p.trainable && (p.grad.len() != p.value.len() || self.m[i].len() != p.value.len()) {
                return Err(Error::Contract(format!(
                    "missing or mis-sized gradient for {}",
                    p.name
                )));
            }
        }
        self.step_count += 1;
        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            adam_update(
                p.value.data_mut(),
                &p.grad,
                &mut self.m[i],
                &mut self.v[i],
                self.step_count,
                &self.config,
            );
        }
        Ok(())
    }
}
