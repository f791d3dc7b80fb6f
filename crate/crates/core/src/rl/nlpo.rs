//! Top-p action masking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::ActionDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NlpoConfig {
    pub top_p: f64,
    /// Policy updates between refreshes of the masking snapshot.
    pub mask_update_period: usize,
}

impl Default for NlpoConfig {
    fn default() -> Self {
        NlpoConfig {
            top_p: 0.95,
            mask_update_period: 10,
        }
    }
}

impl NlpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config("nlpo.top_p must lie in (0, 1]".into()));
        }
        if self.mask_update_period == 0 {
            return Err(Error::Config("nlpo.mask_update_period must be at least 1".into()));
        }
        Ok(())
    }
}

/// Boolean support of the smallest descending-probability prefix whose
/// cumulative mass exceeds `top_p` (ties by lower index first). If no
/// proper prefix exceeds it, every token is kept.
pub fn top_p_support(probs: &[f64], top_p: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut keep = vec![false; probs.len()];
    let mut cum = 0.0;
    for &j in &order {
        keep[j] = true;
        cum += probs[j];
        if cum > top_p {
            break;
        }
    }
    keep
}

/// Restricts `dist` to its top-p support and renormalizes.
pub fn nlpo_mask(dist: &ActionDistribution, top_p: f64) -> ActionDistribution {
    let support = top_p_support(&dist.probs, top_p);
    let mask = match &dist.mask {
        Some(prev) => support.iter().zip(prev).map(|(&a, &b)| a && b).collect(),
        None => support,
    };
    dist.restrict(&mask)
        .expect("top-p support always keeps the most probable token")
}
