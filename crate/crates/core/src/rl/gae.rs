//! Generalized advantage estimation.

use crate::error::{Error, Result};

/// Advantages and returns for one episode with terminal bootstrap 0.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.is_empty() {
        return Err(Error::invalid("cannot estimate advantages for an empty episode"));
    }
    if rewards.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: rewards.len(),
            actual: values.len(),
        });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}
