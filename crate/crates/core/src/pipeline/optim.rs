use std::f64::consts::PI;

use super::config::TrainConfig;
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Cosine annealing from `base` at step 0 to zero at `step == total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = step.min(total) as f64 / total as f64;
    base * 0.5 * (1.0 + (PI * t).cos())
}

/// Adam with decoupled weight decay. Moments are kept per parameter in store
/// order; frozen parameters are skipped.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.tensor.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One update at learning rate `lr`. Gradients are checked before any
    /// parameter is touched, so a non-finite gradient leaves the store as is.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Mismatch(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for ((_, p), g) in store.iter().zip(grads) {
            if g.shape() != p.tensor.shape() {
                return Err(Error::shape("optimizer_step", p.tensor.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter `{}`", p.name)));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in store.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let decay = 1.0 - lr * self.weight_decay;
            let w = p.tensor.data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                w[i] = w[i] * decay - lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
