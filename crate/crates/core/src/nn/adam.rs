use serde::{Deserialize, Serialize};

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `params` in place. `t` is the 1-based
/// step count.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T], config: &AdamConfig, t: u64) {
    assert!(t >= 1);
    assert!(params.len() == grads.len() && m.len() == grads.len() && v.len() == grads.len());
    let b1 = T::lit(config.beta1);
    let b2 = T::lit(config.beta2);
    let c1 = T::lit(1.0 - config.beta1.powf(t as f64));
    let c2 = T::lit(1.0 - config.beta2.powf(t as f64));
    let lr = T::lit(config.lr);
    let eps = T::lit(config.eps);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam state for a list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Vec<T>], grads: &[Vec<T>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        self.step += 1;
        for (i, p) in params.iter_mut().enumerate() {
            adam_step(p, &grads[i], &mut self.m[i], &mut self.v[i], &self.config, self.step);
        }
    }
}
