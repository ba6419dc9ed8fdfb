//! Adam and the warmup + cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::encoder::EncoderParams;

/// Learning rate at iteration `iter` (0-based) of a `total_iters` run:
/// linear warmup reaching `base_lr` at `iter == warmup_iters`, then cosine
/// decay towards zero.
pub fn learning_rate_at(iter: usize, base_lr: f64, warmup_iters: usize, total_iters: usize) -> f64 {
    if iter < warmup_iters {
        // Iteration 0 runs at base_lr / warmup_iters so the rate stays positive.
        return base_lr * iter.max(1) as f64 / warmup_iters as f64;
    }
    if total_iters <= warmup_iters {
        return base_lr;
    }
    let progress = (iter - warmup_iters) as f64 / (total_iters - warmup_iters) as f64;
    base_lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Adam with bias correction, holding first and second moments per
/// parameter buffer of [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &EncoderParams, betas: (f64, f64), eps: f64) -> Self {
        let shapes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
        Self {
            beta1: betas.0,
            beta2: betas.1,
            eps,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `grads` must have the same layout as `params`.
    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderParams, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let grads = grads.slices();
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
