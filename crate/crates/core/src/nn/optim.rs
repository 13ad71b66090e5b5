use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ParamId, ParamStore};

/// Step-decay learning rate: `initial · decay^⌊(t−1)/interval⌋` for the
/// 1-based optimizer step `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub interval: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            decay: 0.5,
            interval: 10_000,
        }
    }
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            initial: lr,
            decay: 1.0,
            interval: u64::MAX,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        let k = step.saturating_sub(1) / self.interval.max(1);
        self.initial * self.decay.powi(k.min(i32::MAX as u64) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: LrSchedule::default(),
        }
    }
}

/// Adam over a fixed set of parameters. Moment buffers are indexed like
/// `params`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    params: Vec<ParamId>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore<f32>, params: Vec<ParamId>, config: AdamConfig) -> Self {
        let m: Vec<Vec<f32>> = params.iter().map(|&p| vec![0.0; store.tensor(p).numel()]).collect();
        Self {
            config,
            v: m.clone(),
            m,
            params,
            step: 0,
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.schedule.at(self.step.max(1))
    }

    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    /// Restores moments and the step counter, e.g. from a checkpoint.
    pub fn restore(&mut self, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>, step: u64) -> Result<()> {
        let ok = m.len() == self.params.len()
            && v.len() == self.params.len()
            && m.iter().zip(&self.m).all(|(a, b)| a.len() == b.len())
            && v.iter().zip(&self.v).all(|(a, b)| a.len() == b.len());
        if !ok {
            return Err(Error::Shape("optimizer moment buffers do not match parameters".into()));
        }
        self.m = m;
        self.v = v;
        self.step = step;
        Ok(())
    }

    /// Applies one update and clears the gradients of the updated
    /// parameters.
    pub fn step(&mut self, store: &mut ParamStore<f32>) -> Result<()> {
        for &p in &self.params {
            if store.tensor(p).grad().is_none() {
                return Err(Error::MissingGrad(store.name(p).to_string()));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let c = &self.config;
        let lr = c.schedule.at(self.step);
        let bc1 = (1.0 - c.beta1.powf(t)) as f32;
        let bc2 = (1.0 - c.beta2.powf(t)) as f32;
        let (b1, b2, eps, lr) = (c.beta1 as f32, c.beta2 as f32, c.eps as f32, lr as f32);
        for (k, &p) in self.params.iter().enumerate() {
            let tensor = store.tensor_mut(p);
            let grad = tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((w, &g), mi), vi) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            tensor.clear_grad();
        }
        Ok(())
    }
}
