use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::Params;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Rescale gradients whose global norm exceeds this value.
    pub grad_clip: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr0: 0.015,
            momentum: 0.9,
            weight_decay: 0.001,
            lr_decay: 0.94,
            epochs: 30,
            batch_size: 16,
            grad_clip: None,
        }
    }
}

impl OptimConfig {
    /// `lr0 · lr_decay^epoch`.
    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(epoch as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive when set");
        }
        Ok(())
    }
}

/// Weights, momentum buffers and bookkeeping of one optimisation run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: Params,
    pub velocity: Params,
    pub epoch: usize,
    pub seed: u64,
}

impl TrainState {
    pub fn new(params: Params, seed: u64) -> Self {
        let velocity = params.zeros_like();
        Self {
            params,
            velocity,
            epoch: 0,
            seed,
        }
    }
}

/// `v ← m·v + g + wd·w`, then `w ← w − lr·v`.
pub fn sgd_step(state: &mut TrainState, grads: &Params, lr: f64, cfg: &OptimConfig) -> Result<()> {
    grads.check_layout(&state.params)?;
    state.velocity.check_layout(&state.params)?;
    let (m, wd) = (cfg.momentum, cfg.weight_decay);
    let params = state.params.iter_mut();
    let velocity = state.velocity.iter_mut();
    for (((_, w), (_, v)), (_, g)) in params.zip(velocity).zip(grads.iter()) {
        for ((wi, vi), gi) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = m * *vi + gi + wd * *wi;
            *wi -= lr * *vi;
        }
    }
    Ok(())
}
