//! Adam optimizer over named parameter blocks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Adam with bias correction. Each named block keeps its own moments and
/// step count.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: BTreeMap::new(),
        }
    }

    /// Applies one update to `params` with learning rate `lr`.
    pub fn step_with_lr(&mut self, name: &str, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch for `{name}`");
        let c = self.config;
        let s = self.state.entry(name.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            t: 0,
        });
        s.t += 1;
        let bc1 = 1.0 - c.beta1.powi(s.t);
        let bc2 = 1.0 - c.beta2.powi(s.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(s.m.iter_mut().zip(s.v.iter_mut())) {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            *p -= update;
        }
    }

    pub fn step(&mut self, name: &str, params: &mut [f64], grads: &[f64]) {
        let lr = self.config.lr;
        self.step_with_lr(name, params, grads, lr);
    }
}
