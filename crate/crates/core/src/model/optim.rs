use serde::{Deserialize, Serialize};

use super::tinylm::Layout;

/// Linearly decayed learning rate, `lr0 · max(0, 1 − step/max_steps)`.
pub fn lr_at(lr0: f64, step: usize, max_steps: usize) -> f64 {
    lr0 * (1.0 - step as f64 / max_steps as f64).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW with bias correction. Weight decay is applied to matrices and
/// embedding tables, not to biases or norm parameters.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<f32>,
    v: Vec<f32>,
    decay: Vec<bool>,
    t: i32,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, layout: &Layout) -> Self {
        let mut decay = vec![false; layout.total];
        for t in &layout.tensors {
            decay[t.range()].iter_mut().for_each(|d| *d = t.decay);
        }
        AdamW {
            cfg,
            m: vec![0.0; layout.total],
            v: vec![0.0; layout.total],
            decay,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let (one_b1, one_b2) = ((1.0 - c.beta1) as f32, (1.0 - c.beta2) as f32);
        let step_size = (lr / bc1) as f32;
        let inv_bc2 = (1.0 / bc2) as f32;
        let eps = c.eps as f32;
        let decay = (lr * c.weight_decay) as f32;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            if lr == 0.0 {
                continue;
            }
            let denom = (self.v[i] * inv_bc2).sqrt() + eps;
            let mut p = params[i];
            if self.decay[i] {
                p -= decay * p;
            }
            params[i] = p - step_size * self.m[i] / denom;
        }
    }
}
