use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Schedule {
    Constant,
    /// `lr0 · ½ · (1 + cos(π · t / total_steps))`
    Cosine {
        total_steps: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
}

impl SgdConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine { total_steps } => {
                let t = step.min(total_steps) as f64 / total_steps.max(1) as f64;
                self.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μ·v + g + wd·p`, `p ← p − lr(t)·v`.
#[derive(Debug)]
pub struct SgdOptimizer<T = f64> {
    config: SgdConfig,
    params: Vec<Param<T>>,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> SgdOptimizer<T> {
    pub fn new(params: Vec<Param<T>>, config: SgdConfig) -> Self {
        let velocity = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        Self {
            config,
            params,
            velocity,
        }
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.config.lr_at(step)
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Param::zero_grad);
    }

    /// Clips the stored gradients to `max_norm`, then steps. Returns the
    /// pre-clip norm.
    pub fn clipped_step(&mut self, step_index: usize, max_norm: f64) -> Result<f64> {
        let norm = clip_grad_norm(&self.params, max_norm)?;
        self.step(step_index);
        Ok(norm)
    }

    /// Applies one update from the gradients currently stored on the params.
    pub fn step(&mut self, step_index: usize) {
        let lr = T::of(self.lr_at(step_index));
        let mu = T::of(self.config.momentum);
        let wd = T::of(self.config.weight_decay);
        for (p, v) in self.params.iter().zip(&mut self.velocity) {
            let g = p.grad().to_vec();
            let mut value = p.value_mut();
            for ((w, vel), gi) in value.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vel = mu * *vel + gi + wd * *w;
                *w = *w - lr * *vel;
            }
        }
    }
}

/// Default global gradient-norm bound.
pub const CLIP_NORM: f64 = 5.0;

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(params: &[Param<T>], max_norm: f64) -> Result<f64> {
    if max_norm <= 0.0 || !max_norm.is_finite() {
        return Err(Error::config("clip_norm", "must be positive and finite"));
    }
    let sq: T = params.iter().map(|p| p.grad().iter().map(|&g| g * g).sum::<T>()).sum();
    let norm = sq.sqrt().to_f64_lossy();
    if norm > max_norm {
        let scale = T::of(max_norm / norm);
        for p in params {
            p.grad_mut().iter_mut().for_each(|g| *g = *g * scale);
        }
    }
    Ok(norm)
}
