use serde::{Deserialize, Serialize};

use crate::ops::Scalar;
use crate::params::Layout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    /// Fraction of the stage's steps spent in linear warmup.
    pub warmup_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; zero disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 5e-4,
            warmup_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
        }
    }
}

/// Linear warmup to `lr` over `warmup` steps, then `lr * sqrt(warmup / step)`.
/// Steps are 1-based.
pub fn learning_rate(cfg: &OptimConfig, step: usize, total_steps: usize) -> f64 {
    let warmup = ((cfg.warmup_fraction * total_steps as f64).round() as usize).max(1);
    let s = step.max(1) as f64;
    if step <= warmup {
        cfg.lr * s / warmup as f64
    } else {
        cfg.lr * (warmup as f64 / s).sqrt()
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: OptimConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    decay_mask: Vec<bool>,
}

impl AdamW {
    pub fn new(cfg: OptimConfig, layout: &Layout) -> Self {
        let mut decay_mask = vec![false; layout.total];
        for s in layout.specs.iter().filter(|s| s.decays()) {
            decay_mask[s.range()].fill(true);
        }
        AdamW {
            cfg,
            m: vec![0.0; layout.total],
            v: vec![0.0; layout.total],
            t: 0,
            decay_mask,
        }
    }

    /// Clips `grads` in place and returns the norm before clipping.
    pub fn clip<S: Scalar>(&self, grads: &mut [S]) -> f64 {
        let norm = grads.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
        if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            let k = S::of(self.cfg.clip_norm / norm);
            grads.iter_mut().for_each(|g| *g *= k);
        }
        norm
    }

    pub fn step<S: Scalar>(&mut self, params: &mut [S], grads: &[S], lr: f64) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i].f64();
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let mut p = params[i].f64();
            if self.decay_mask[i] {
                p -= lr * c.weight_decay * p;
            }
            p -= lr * mhat / (vhat.sqrt() + c.eps);
            params[i] = S::of(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    #[test]
    fn schedule_shape() {
        let cfg = OptimConfig::default();
        assert!((learning_rate(&cfg, 1, 100) - 5e-5).abs() < 1e-12);
        assert!((learning_rate(&cfg, 10, 100) - 5e-4).abs() < 1e-12);
        assert!((learning_rate(&cfg, 40, 100) - 2.5e-4).abs() < 1e-12);
        assert!(learning_rate(&cfg, 11, 100) < learning_rate(&cfg, 10, 100));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let layout = Layout::new(&ModelConfig::tiny(10));
        let mut opt = AdamW::new(
            OptimConfig {
                weight_decay: 0.0,
                ..OptimConfig::default()
            },
            &layout,
        );
        let mut p = vec![0.0f64; layout.total];
        let mut g = vec![0.0f64; layout.total];
        g[0] = 3.0;
        g[1] = -0.5;
        opt.step(&mut p, &g, 0.1);
        assert!((p[0] + 0.1).abs() < 1e-6 && (p[1] - 0.1).abs() < 1e-6 && p[2] == 0.0);
    }
}
