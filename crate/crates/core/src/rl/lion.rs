//! Sign-momentum (Lion) optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{ParamGrad, PolicyParams};

/// Learning rate used by desk-scale runs of the linear policy.
pub const DESK_LEARNING_RATE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LionConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

impl Default for LionConfig {
    fn default() -> Self {
        LionConfig {
            learning_rate: 4.9e-6,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.0,
        }
    }
}

impl LionConfig {
    pub fn desk() -> Self {
        LionConfig {
            learning_rate: DESK_LEARNING_RATE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("lion.learning_rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("lion.{name} must lie in (0, 1)")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lion.weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One in-place Lion update of `theta` (descending along `grad`).
pub fn lion_step(theta: &mut [f64], grad: &[f64], momentum: &mut [f64], cfg: &LionConfig) {
    assert_eq!(theta.len(), grad.len(), "parameter/gradient length mismatch");
    assert_eq!(theta.len(), momentum.len(), "parameter/momentum length mismatch");
    for ((w, &g), m) in theta.iter_mut().zip(grad).zip(momentum.iter_mut()) {
        let c = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *w -= cfg.learning_rate * (sign(c) + cfg.weight_decay * *w);
        *m = cfg.beta2 * *m + (1.0 - cfg.beta2) * g;
    }
}

/// Lion state for [`PolicyParams`]: momentum over the logit weights followed
/// by the value weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lion {
    pub config: LionConfig,
    pub momentum: Vec<f64>,
}

impl Lion {
    pub fn new(config: LionConfig, num_params: usize) -> Self {
        Lion {
            config,
            momentum: vec![0.0; num_params],
        }
    }

    pub fn for_policy(config: LionConfig, params: &PolicyParams) -> Self {
        Self::new(config, params.logit_weights.len() + params.value_weights.len())
    }

    pub fn step(&mut self, params: &mut PolicyParams, grad: &ParamGrad) {
        let split = params.logit_weights.len();
        let (m_logit, m_value) = self.momentum.split_at_mut(split);
        lion_step(&mut params.logit_weights, &grad.logit, m_logit, &self.config);
        lion_step(&mut params.value_weights, &grad.value, m_value, &self.config);
    }
}
