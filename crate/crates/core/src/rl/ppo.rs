//! Clipped-surrogate loss with a jointly trained value head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::policy::{ParamGrad, PolicyParams};
use crate::rl::rollout::Rollout;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub update_epochs_per_batch: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_coef: f64,
    /// Global L2 norm cap on the gradient.
    pub max_grad_clip: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            update_epochs_per_batch: 4,
            gamma: 1.0,
            gae_lambda: 0.95,
            value_coef: 0.5,
            max_grad_clip: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config("ppo.clip_epsilon must lie in (0, 1)".into()));
        }
        if self.update_epochs_per_batch == 0 {
            return Err(Error::Config("ppo.update_epochs_per_batch must be at least 1".into()));
        }
        for (name, v) in [("gamma", self.gamma), ("gae_lambda", self.gae_lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("ppo.{name} must lie in (0, 1]")));
            }
        }
        if !(self.value_coef >= 0.0) || !(self.max_grad_clip > 0.0) {
            return Err(Error::Config(
                "ppo.value_coef must be non-negative and ppo.max_grad_clip positive".into(),
            ));
        }
        Ok(())
    }
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Fraction of steps whose surrogate took the clipped branch.
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Loss and its exact gradient (no clipping of the gradient).
pub fn ppo_loss_and_grad(
    params: &PolicyParams,
    rollouts: &[Rollout],
    cfg: &PpoConfig,
    exec: Execution,
) -> Result<(PpoStats, ParamGrad)> {
    let steps: usize = rollouts.iter().map(Rollout::len).sum();
    if steps == 0 {
        return Err(Error::invalid("no steps to optimize"));
    }
    let (v, d) = (params.vocab_size(), params.feature_dim);
    let partials = exec.map(rollouts, |r| -> Result<(f64, f64, usize, ParamGrad)> {
        let mut g = ParamGrad::zeros(v, d);
        let (mut pol, mut val, mut clipped) = (0.0, 0.0, 0usize);
        for (t, step) in r.steps.iter().enumerate() {
            let a = r.advantages[t];
            let (lp, coeffs) = params.logprob_coeffs(&step.features, step.action, Some(step.mask()))?;
            let ratio = (lp - step.logprob).exp();
            let unclipped = ratio * a;
            let surrogate = clipped_surrogate(ratio, a, cfg.clip_epsilon);
            pol -= surrogate;
            if unclipped <= surrogate {
                // d(-ratio * A) = -A * ratio * dlogpi
                PolicyParams::accumulate_logprob_grad(&mut g, d, &step.features, &coeffs, -a * ratio);
            } else {
                clipped += 1;
            }
            let err = params.value_from_features(&step.features) - r.returns[t];
            val += err * err;
            for &(i, x) in &step.features {
                g.value[i] += cfg.value_coef * 2.0 * err * x;
            }
        }
        if !(pol.is_finite() && val.is_finite()) {
            return Err(Error::NonFiniteLoss { episode: r.episode });
        }
        Ok((pol, val, clipped, g))
    });

    let mut grad = ParamGrad::zeros(v, d);
    let (mut pol, mut val, mut clipped) = (0.0, 0.0, 0usize);
    for p in partials {
        let (pl, vl, c, g) = p?;
        pol += pl;
        val += vl;
        clipped += c;
        grad.add(&g);
    }
    let n = steps as f64;
    grad.scale(1.0 / n);
    let (policy_loss, value_loss) = (pol / n, val / n);
    let stats = PpoStats {
        loss: policy_loss + cfg.value_coef * value_loss,
        policy_loss,
        value_loss,
        clip_fraction: clipped as f64 / n,
        grad_norm: grad.norm(),
    };
    Ok((stats, grad))
}

/// Loss and gradient with the gradient rescaled to global norm at most
/// `max_grad_clip`.
pub fn ppo_step(
    params: &PolicyParams,
    rollouts: &[Rollout],
    cfg: &PpoConfig,
    exec: Execution,
) -> Result<(PpoStats, ParamGrad)> {
    let (stats, mut grad) = ppo_loss_and_grad(params, rollouts, cfg, exec)?;
    if stats.grad_norm > cfg.max_grad_clip {
        grad.scale(cfg.max_grad_clip / stats.grad_norm);
    }
    Ok((stats, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_semantics() {
        assert_eq!(clipped_surrogate(2.0, 1.0, 0.2), 1.2);
        assert_eq!(clipped_surrogate(2.0, -1.0, 0.2), -2.0);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
        assert_eq!(clipped_surrogate(1.0, 0.3, 0.2), 0.3);
    }

    #[test]
    fn smaller_epsilon_never_raises_the_objective() {
        for &r in &[0.1, 0.7, 0.95, 1.0, 1.1, 1.5, 3.0] {
            for &a in &[-2.0, -0.1, 0.0, 0.4, 5.0] {
                let mut prev = f64::INFINITY;
                for &e in &[0.5, 0.3, 0.2, 0.1, 0.01] {
                    let s = clipped_surrogate(r, a, e);
                    assert!(s <= prev);
                    prev = s;
                }
            }
        }
    }

    #[test]
    fn magnitude_can_grow_for_negative_advantage_below_one() {
        assert!(clipped_surrogate(0.5, -1.0, 0.1).abs() > clipped_surrogate(0.5, -1.0, 0.5).abs());
    }
}
