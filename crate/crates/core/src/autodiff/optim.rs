//! AdamW with decoupled weight decay, warmup + cosine schedule, and global
//! gradient-norm clipping.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 2e-4,
            weight_decay: 1e-5,
            clip_norm: 5.0,
            warmup_steps: 1000,
            total_steps: 50_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps ({}) must be below total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || !(self.eps > 0.0) {
            return Err(Error::Config("weight_decay ≥ 0 and eps > 0 required".into()));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `lr`, then cosine decay to 0 at `total_steps`.
pub fn cosine_lr(step: usize, opt: &OptimizerConfig) -> Result<f64> {
    if step > opt.total_steps {
        return Err(Error::InvalidInput(format!("step {step} beyond schedule of {} steps", opt.total_steps)));
    }
    if step < opt.warmup_steps {
        return Ok(opt.lr * step as f64 / opt.warmup_steps as f64);
    }
    let span = (opt.total_steps - opt.warmup_steps) as f64;
    let progress = (step - opt.warmup_steps) as f64 / span;
    Ok(0.5 * opt.lr * (1.0 + (PI * progress).cos()))
}

pub fn grad_norm(store: &ParamStore) -> f64 {
    store.entries().iter().map(|e| e.grad.iter().map(|g| g * g).sum::<f64>()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied (1 when no clipping happened).
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grad_norm(store);
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for e in store.entries_mut() {
            e.grad.mapv_inplace(|g| g * scale);
        }
        scale
    } else {
        1.0
    }
}

/// One AdamW update at learning rate `lr`; frozen entries are skipped.
pub fn adamw_step(store: &mut ParamStore, opt: &OptimizerConfig, lr: f64) -> Result<()> {
    for e in store.entries() {
        if e.trainable && e.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", e.name)));
        }
    }
    store.step_count += 1;
    let t = store.step_count as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for e in store.entries_mut() {
        if !e.trainable {
            continue;
        }
        let decay = 1.0 - lr * opt.weight_decay;
        ndarray::Zip::from(&mut e.value).and(&mut e.m).and(&mut e.v).and(&e.grad).for_each(|w, m, v, &g| {
            *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
            *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *w = *w * decay - lr * mhat / (vhat.sqrt() + opt.eps);
        });
    }
    Ok(())
}
