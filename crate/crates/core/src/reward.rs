//! Episode rewards: the terminal confusion/MI objective, the per-token KL
//! penalty against the frozen reference policy and their assembly into
//! per-token rewards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::ActionDistribution;
use crate::scorers::Scorers;
use crate::textcore::{LabeledExample, Sentence};
use crate::victim::Victim;

/// Reference probabilities under this value are treated as the floor when
/// the reference was restricted by a support mask.
pub const MASKED_REFERENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Weight on confusion.
    pub upsilon: f64,
    /// Weight on mutual implication.
    pub alpha: f64,
    /// Per-token KL weight.
    pub beta: f64,
    pub mi_floor_for_training: f64,
    /// Standardize terminal rewards within each batch.
    pub normalize: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            upsilon: 0.5,
            alpha: 0.5,
            beta: 0.2,
            mi_floor_for_training: 0.5,
            normalize: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("upsilon", self.upsilon), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("reward.{name} must be a non-negative number")));
            }
        }
        if !(0.0..=1.0).contains(&self.mi_floor_for_training) {
            return Err(Error::Config("reward.mi_floor_for_training must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn combine(&self, confusion: f64, mi: f64) -> f64 {
        self.upsilon * confusion + self.alpha * mi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalReward {
    pub terminal: f64,
    pub confusion: f64,
    pub mi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub confusion: f64,
    pub mi: f64,
    pub terminal: f64,
    pub kl_per_token: Vec<f64>,
    pub token_rewards: Vec<f64>,
}

/// Scores a generated sentence against the victim and the MI backend.
pub fn terminal_reward(
    victim: &dyn Victim,
    scorers: &Scorers,
    original: &LabeledExample,
    generated: &Sentence,
    cfg: &RewardConfig,
) -> Result<TerminalReward> {
    if generated.is_empty() {
        return Err(Error::invalid("cannot score an empty generation"));
    }
    let confusion = 1.0 - victim.likelihood(generated, original.label)?;
    let mi = scorers.mutual_implication(&original.sentence, generated)?.mi;
    Ok(TerminalReward {
        terminal: cfg.combine(confusion, mi),
        confusion,
        mi,
    })
}

/// Terminal scoring of one generated episode.
pub trait EpisodeReward: Sync {
    fn score(&self, original: &LabeledExample, generated: &Sentence) -> Result<TerminalReward>;
}

impl<F> EpisodeReward for F
where
    F: Fn(&LabeledExample, &Sentence) -> Result<TerminalReward> + Sync,
{
    fn score(&self, original: &LabeledExample, generated: &Sentence) -> Result<TerminalReward> {
        self(original, generated)
    }
}

/// The standard victim-confusion plus MI reward.
pub struct VictimReward<'a> {
    pub victim: &'a dyn Victim,
    pub scorers: &'a Scorers,
    pub config: RewardConfig,
}

impl EpisodeReward for VictimReward<'_> {
    fn score(&self, original: &LabeledExample, generated: &Sentence) -> Result<TerminalReward> {
        terminal_reward(self.victim, self.scorers, original, generated, &self.config)
    }
}

/// Exact `KL(current || reference)` over the full vocabulary.
pub fn kl_step(current: &ActionDistribution, reference: &ActionDistribution) -> Result<f64> {
    if current.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: current.len(),
            actual: reference.len(),
        });
    }
    let mut kl = 0.0;
    for (j, (&p, &q)) in current.probs.iter().zip(&reference.probs).enumerate() {
        if p <= 0.0 {
            continue;
        }
        let q = if q > 0.0 {
            q
        } else if reference.mask.is_some() {
            MASKED_REFERENCE_FLOOR
        } else {
            return Err(Error::SupportViolation { index: j, p });
        };
        kl += p * (p / q).ln();
    }
    // rounding can leave tiny negative sums for near-identical inputs
    Ok(kl.max(0.0))
}

/// The sampled estimator `pi(a) * ln(pi(a) / pi_ref(a))` at the taken action.
pub fn kl_literal_term(p_action: f64, q_action: f64) -> f64 {
    if p_action <= 0.0 {
        0.0
    } else {
        p_action * (p_action / q_action.max(MASKED_REFERENCE_FLOOR)).ln()
    }
}

/// Per-token rewards: `-beta * kl[t]` everywhere, plus `ratio * terminal` on
/// the final token.
pub fn assemble_token_rewards(terminal: f64, kls: &[f64], ratios: &[f64], cfg: &RewardConfig) -> Result<Vec<f64>> {
    if kls.is_empty() {
        return Err(Error::invalid("cannot assemble rewards for an empty episode"));
    }
    if kls.len() != ratios.len() {
        return Err(Error::DimensionMismatch {
            expected: kls.len(),
            actual: ratios.len(),
        });
    }
    let last = kls.len() - 1;
    Ok(kls
        .iter()
        .enumerate()
        .map(|(t, &k)| {
            let penalty = -cfg.beta * k;
            if t == last {
                ratios[t] * terminal + penalty
            } else {
                penalty
            }
        })
        .collect())
}

/// One JSONL line of the reward trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub epoch: usize,
    pub episode: usize,
    pub confusion: f64,
    pub mi: f64,
    pub terminal: f64,
    pub kl_sum: f64,
    pub token_rewards: Vec<f64>,
    /// Sum over steps of [`kl_literal_term`].
    pub kl_literal: f64,
    /// Importance ratio applied to the terminal reward.
    pub ratio: f64,
}
