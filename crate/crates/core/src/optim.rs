//! AdamW with decoupled weight decay, plus the learning-rate and EMA
//! momentum schedules used by the trainer and the probes.

use crate::error::{Error, Result};
use crate::nn::{Grads, ParamStore, Scalar};
use ndarray::{ArrayD, Zip};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers for one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub first: Vec<ArrayD<F>>,
    pub second: Vec<ArrayD<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn for_store(store: &ParamStore<F>) -> Self {
        let zeros = || {
            store
                .params()
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect::<Vec<_>>()
        };
        AdamState {
            first: zeros(),
            second: zeros(),
        }
    }

    /// One update at 1-based step `t`. Frozen parameters are skipped; weight
    /// decay applies only to parameters flagged for it.
    pub fn step(
        &mut self,
        cfg: &AdamWConfig,
        store: &mut ParamStore<F>,
        grads: &Grads<F>,
        lr: f64,
        weight_decay: f64,
        t: u64,
    ) -> Result<()> {
        if grads.tensors().len() != store.len() || self.first.len() != store.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        let b1 = F::lit(cfg.beta1);
        let b2 = F::lit(cfg.beta2);
        let c1 = F::one() - b1;
        let c2 = F::one() - b2;
        let bias1 = F::lit(1.0 - cfg.beta1.powi(t as i32));
        let bias2 = F::lit(1.0 - cfg.beta2.powi(t as i32));
        let eps = F::lit(cfg.eps);
        let lr_f = F::lit(lr);
        let decay = F::lit(lr * weight_decay);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let wd = if p.decay { decay } else { F::zero() };
            Zip::from(&mut p.value)
                .and(&mut self.first[i])
                .and(&mut self.second[i])
                .and(&grads.tensors()[i])
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + c1 * g;
                    *v = b2 * *v + c2 * g * g;
                    let mhat = *m / bias1;
                    let vhat = *v / bias2;
                    *w = *w - lr_f * mhat / (vhat.sqrt() + eps) - wd * *w;
                });
        }
        Ok(())
    }
}

/// Linear warmup, then cosine decay to `min_lr` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    /// Learning rate for the 0-based `step`.
    pub fn at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Linear ramp of the EMA momentum from `start` to `end` over training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumSchedule {
    pub start: f64,
    pub end: f64,
    pub total_steps: u64,
}

impl MomentumSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.start;
        }
        let t = (step as f64 / self.total_steps as f64).min(1.0);
        self.start + (self.end - self.start) * t
    }
}
