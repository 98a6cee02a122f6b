//! Adam with a linear-warmup, halve-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Relative loss improvement that resets the plateau counter.
pub const PLATEAU_THRESHOLD: f64 = 1e-3;
pub const PLATEAU_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> Adam<T> {
    /// Zeroed moments, one buffer per parameter tensor of the given length.
    pub fn new(lengths: &[usize]) -> Self {
        Self {
            m: lengths.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: lengths.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    /// One bias-corrected update of every tensor whose `trainable` flag is
    /// set. Moments of frozen tensors are left untouched.
    pub fn update(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>, trainable: &[bool], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() || trainable.len() != self.m.len() {
            return Err(Error::contract("optimizer state does not match parameter list"));
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = T::of(1.0 - BETA1.powf(t));
        let c2 = T::of(1.0 - BETA2.powf(t));
        let (b1, b2) = (T::of(BETA1), T::of(BETA2));
        let (one, eps, lr) = (T::one(), T::of(ADAM_EPS), T::of(lr));
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if !trainable[k] {
                continue;
            }
            if p.len() != g.len() || p.len() != self.m[k].len() {
                return Err(Error::contract("parameter and gradient lengths differ"));
            }
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(&mut self.m[k]).zip(&mut self.v[k]) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub patience: usize,
    /// Product of all plateau reductions so far.
    pub scale: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_epochs: usize, patience: usize) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::Argument(format!("base_lr must be positive, got {base_lr}")));
        }
        if patience == 0 {
            return Err(Error::Argument("patience must be at least 1".into()));
        }
        Ok(Self {
            base_lr,
            warmup_epochs,
            patience,
            scale: 1.0,
            best: None,
            bad_epochs: 0,
        })
    }

    /// Learning rate at the start of `epoch` (0-based).
    pub fn epoch_lr(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            self.base_lr * epoch as f64 / self.warmup_epochs as f64
        } else {
            self.base_lr * self.scale
        }
    }

    /// Learning rate used by step `step` (0-based) of `steps` in `epoch`;
    /// during warmup it rises linearly to reach the next epoch's value at
    /// the epoch's last step.
    pub fn step_lr(&self, epoch: usize, step: usize, steps: usize) -> f64 {
        if epoch < self.warmup_epochs {
            let progress = epoch as f64 + (step + 1) as f64 / steps.max(1) as f64;
            self.base_lr * progress / self.warmup_epochs as f64
        } else {
            self.base_lr * self.scale
        }
    }

    /// Records the mean loss of `epoch`. After warmup, `patience` epochs
    /// without relative improvement over the best loss halve the rate.
    /// Returns whether the rate was reduced.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(best) => loss < best - PLATEAU_THRESHOLD * best.abs(),
        };
        if improved {
            self.best = Some(loss);
            self.bad_epochs = 0;
            return false;
        }
        if epoch < self.warmup_epochs {
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.scale *= PLATEAU_FACTOR;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}
