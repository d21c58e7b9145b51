use serde::{Deserialize, Serialize};

use super::params::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW: bias-corrected moments with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &ParameterStore) -> Self {
        let m: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        AdamState {
            cfg,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// Applies one update from the gradients stored in `params`.
    pub fn step(&mut self, params: &mut ParameterStore) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            for i in 0..p.data.len() {
                let g = p.grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] -= c.lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * p.data[i]);
            }
        }
    }
}
