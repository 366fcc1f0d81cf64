//! Schedule-free AdamW: gradients are taken at an interpolation between a
//! base iterate `z` and its running average `x`, and no decay schedule is used.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Learning rate tuned on the toy task at [`DEFAULT_BASE_WIDTH`].
pub const DEFAULT_LR: f64 = 3e-2;
pub const DEFAULT_BASE_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    /// Learning rate at the base width; scaled per parameter by width transfer.
    pub lr: f64,
    /// Width at which `lr` was tuned.
    pub base_width: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerSpec {
    pub fn new(lr: f64, base_width: usize, batch_size: usize) -> Self {
        Self { lr, base_width, batch_size, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && self.base_width > 0
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// State over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct ScheduleFreeAdamW {
    spec: OptimizerSpec,
    /// Per-entry learning rates.
    lr: Vec<f64>,
    z: Vec<f64>,
    x: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl ScheduleFreeAdamW {
    /// Starts with `z = x = init`. `lr` holds one rate per entry.
    pub fn new(spec: OptimizerSpec, init: Vec<f64>, lr: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if lr.len() != init.len() {
            return Err(Error::Shape(format!("{} learning rates for {} parameters", lr.len(), init.len())));
        }
        let n = init.len();
        Ok(Self { spec, lr, z: init.clone(), x: init, v: vec![0.0; n], steps: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Point at which the next gradient is evaluated: `(1−β1)z + β1x`.
    pub fn gradient_point(&self) -> Vec<f64> {
        let b = self.spec.beta1;
        self.z.iter().zip(&self.x).map(|(z, x)| (1.0 - b) * z + b * x).collect()
    }

    /// Averaged iterate, the one to evaluate and save.
    pub fn averaged(&self) -> &[f64] {
        &self.x
    }

    /// One update from the gradient taken at [`Self::gradient_point`].
    pub fn step(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.z.len() {
            return Err(Error::Shape(format!("gradient of length {} for {} parameters", grad.len(), self.z.len())));
        }
        let y = self.gradient_point();
        self.steps += 1;
        let s = &self.spec;
        let bias2 = 1.0 - s.beta2.powi(self.steps.min(i32::MAX as u64) as i32);
        let c = 1.0 / self.steps as f64;
        for i in 0..self.z.len() {
            let g = grad[i];
            self.v[i] = s.beta2 * self.v[i] + (1.0 - s.beta2) * g * g;
            let denom = (self.v[i] / bias2).sqrt() + s.eps;
            self.z[i] -= self.lr[i] * (g / denom + s.weight_decay * y[i]);
            self.x[i] = (1.0 - c) * self.x[i] + c * self.z[i];
        }
        Ok(())
    }
}
