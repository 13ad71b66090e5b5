use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

/// Soft Actor-Critic hyperparameters and auxiliary-loss switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Polyak rate for the target critics.
    pub tau: f64,
    pub batch_size: usize,
    /// Prediction window; 0 disables the temporal loss.
    pub k: usize,
    pub lambda_sc: f64,
    pub lambda_tc: f64,
    pub warmup: usize,
    pub updates_per_step: usize,
    pub target_entropy: f64,
    pub enable_scl: bool,
    pub enable_tcl: bool,
    pub buffer_capacity: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub init_alpha: f64,
    pub alpha_lr: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub optim: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 64,
            k: 3,
            lambda_sc: 1.0,
            lambda_tc: 1.0,
            warmup: 1000,
            updates_per_step: 1,
            target_entropy: -2.0,
            enable_scl: true,
            enable_tcl: true,
            buffer_capacity: 100_000,
            actor_hidden: 256,
            critic_hidden: 256,
            init_alpha: 0.1,
            alpha_lr: 1e-4,
            log_std_min: -20.0,
            log_std_max: 2.0,
            optim: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Whether the temporal loss runs: it needs the flag and a window.
    pub fn tcl_active(&self) -> bool {
        self.enable_tcl && self.k > 0
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [("train.gamma", self.gamma), ("train.tau", self.tau)];
        for (field, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, format!("must lie in [0, 1], got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.updates_per_step == 0 {
            return Err(Error::config("train.updates_per_step", "must be at least 1"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::config("train.buffer_capacity", "must hold at least one batch"));
        }
        if self.actor_hidden == 0 || self.critic_hidden == 0 {
            return Err(Error::config("train.actor_hidden", "hidden widths must be positive"));
        }
        if !(self.lambda_sc >= 0.0 && self.lambda_tc >= 0.0) {
            return Err(Error::config("train.lambda_sc", "loss weights must be non-negative"));
        }
        if !(self.init_alpha > 0.0) {
            return Err(Error::config("train.init_alpha", "must be positive"));
        }
        if !(self.alpha_lr >= 0.0) {
            return Err(Error::config("train.alpha_lr", "must be non-negative"));
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err(Error::config("train.log_std_min", "must be below log_std_max"));
        }
        let s = &self.optim.schedule;
        if !(s.initial > 0.0 && s.decay > 0.0 && s.interval > 0) {
            return Err(Error::config("train.optim.schedule", "needs positive lr, decay and interval"));
        }
        Ok(())
    }
}
