//! Plain SGD with optional momentum, step learning-rate decay, and
//! validation-loss early stopping.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::layers::{column_sums, gemm_tn_apply, AffineParams, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    /// Always zero; kept so configs state it explicitly.
    #[serde(default)]
    pub weight_decay: f64,
    pub step_size: usize,
    pub gamma: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(invalid(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!("momentum must be in [0,1), got {}", self.momentum)));
        }
        if self.weight_decay != 0.0 {
            return Err(invalid("weight decay is not supported"));
        }
        if self.step_size == 0 {
            return Err(invalid("step_size must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        step_lr(self.base_lr, epoch, self.step_size, self.gamma)
    }
}

/// `v ← μ·v + g; θ ← θ − lr·v` on weights and bias.
pub fn sgd_step(p: &mut AffineParams, lr: f64, momentum: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(invalid(format!("learning rate must be positive, got {lr}")));
    }
    let lr = lr as f32;
    if momentum == 0.0 {
        update_plain(p.weights.as_mut_slice(), p.grad_weights.as_slice(), lr);
        update_plain(&mut p.bias, &p.grad_bias, lr);
    } else {
        let mu = momentum as f32;
        update_momentum(
            p.weights.as_mut_slice(),
            p.grad_weights.as_slice(),
            p.velocity_weights.as_mut_slice(),
            lr,
            mu,
        );
        update_momentum(&mut p.bias, &p.grad_bias, &mut p.velocity_bias, lr, mu);
    }
    Ok(())
}

/// Same update as computing the gradient of an affine layer with input `x`
/// and output gradient `d_out`, then calling [`sgd_step`], but without
/// storing the weight gradient. `grad_bias` is still written;
/// `grad_weights` is left untouched.
pub(crate) fn fused_sgd_step(
    x: &DenseMatrix,
    d_out: &DenseMatrix,
    p: &mut AffineParams,
    lr: f64,
    momentum: f64,
    threads: usize,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(invalid(format!("learning rate must be positive, got {lr}")));
    }
    let (lr, mu) = (lr as f32, momentum as f32);
    column_sums(d_out, &mut p.grad_bias);
    gemm_tn_apply(x, d_out, &mut p.weights, &mut p.velocity_weights, threads, |g, w, v| {
        if mu == 0.0 {
            update_plain(w, g, lr);
        } else {
            update_momentum(w, g, v, lr, mu);
        }
    });
    if mu == 0.0 {
        update_plain(&mut p.bias, &p.grad_bias, lr);
    } else {
        update_momentum(&mut p.bias, &p.grad_bias, &mut p.velocity_bias, lr, mu);
    }
    Ok(())
}

fn update_plain(theta: &mut [f32], grad: &[f32], lr: f32) {
    for (t, &g) in theta.iter_mut().zip(grad) {
        *t -= lr * g;
    }
}

fn update_momentum(theta: &mut [f32], grad: &[f32], vel: &mut [f32], lr: f32, mu: f32) {
    for ((t, &g), v) in theta.iter_mut().zip(grad).zip(vel.iter_mut()) {
        *v = mu * *v + g;
        *t -= lr * *v;
    }
}

/// `base_lr · gamma^⌊epoch/step_size⌋` for a 0-based epoch.
pub fn step_lr(base_lr: f64, epoch: usize, step_size: usize, gamma: f64) -> Result<f64> {
    if step_size == 0 {
        return Err(invalid("step_size must be at least 1"));
    }
    let steps = (epoch / step_size) as i32;
    Ok(base_lr * gamma.powi(steps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            patience: 3,
            min_delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopState {
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Number of losses observed so far; the next check refers to this epoch.
    pub epochs_seen: usize,
}

impl EarlyStopState {
    pub fn new(cfg: EarlyStopConfig) -> Self {
        Self {
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
            patience: cfg.patience,
            min_delta: cfg.min_delta,
            epochs_seen: 0,
        }
    }

    /// Records one epoch's validation loss; returns `(improved, stop)`.
    pub fn check(&mut self, val_loss: f64) -> Result<(bool, bool)> {
        if val_loss.is_nan() {
            return Err(invalid("validation loss is NaN"));
        }
        let epoch = self.epochs_seen;
        self.epochs_seen += 1;
        let improved = self.best_val_loss - val_loss > self.min_delta;
        if improved {
            self.best_val_loss = val_loss;
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        Ok((improved, self.epochs_since_improvement > self.patience))
    }
}

/// Functional form of [`EarlyStopState::check`].
pub fn early_stop_check(mut state: EarlyStopState, val_loss: f64) -> Result<(EarlyStopState, bool)> {
    let (_, stop) = state.check(val_loss)?;
    Ok((state, stop))
}
