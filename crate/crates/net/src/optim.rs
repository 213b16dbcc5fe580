//! Adam and a reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.99, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moments kept per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = |p: &[Tensor]| p.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { config, step: 0, m: zeros(params), v: zeros(params) }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.shape(), g.shape());
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let g = g as f64;
                let mm = beta1 * *m as f64 + (1.0 - beta1) * g;
                let vv = beta2 * *v as f64 + (1.0 - beta2) * g * g;
                *m = mm as f32;
                *v = vv as f32;
                *p -= (lr * (mm / c1) / ((vv / c2).sqrt() + eps)) as f32;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { factor: 0.2, patience: 30, min_lr: 1e-6 }
    }
}

/// Multiplies the rate by `factor` once the monitored loss has not improved
/// for `patience` consecutive epochs, never going below `min_lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReduceOnPlateau {
    pub config: PlateauConfig,
    pub lr: f64,
    pub best: f64,
    pub wait: usize,
}

impl ReduceOnPlateau {
    pub fn new(config: PlateauConfig, lr: f64) -> Self {
        Self { config, lr, best: f64::INFINITY, wait: 0 }
    }

    /// Records one epoch's loss and returns the rate for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                self.wait = 0;
            }
        }
        self.lr
    }
}
