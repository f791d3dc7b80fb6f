//! On-policy episode collection.

use crate::error::{Error, Result};
use crate::generator::{generate_candidates, GenConfig, StepRecord};
use crate::par::{derive_seed, Execution};
use crate::policy::PolicyParams;
use crate::reward::{assemble_token_rewards, kl_literal_term, kl_step, EpisodeReward, RewardConfig, RewardTrace, TerminalReward};
use crate::rl::gae::gae;
use crate::rl::ppo::PpoConfig;
use crate::scorers::Scorers;
use crate::textcore::{LabeledExample, Sentence};

/// One scored episode with everything PPO needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Position in the batch.
    pub episode: usize,
    /// Index of the source example in the training set.
    pub example: usize,
    pub generated: Sentence,
    pub steps: Vec<StepRecord>,
    pub values: Vec<f64>,
    pub kl: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub terminal: TerminalReward,
    pub trace: RewardTrace,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Policies involved in collection.
#[derive(Clone, Copy)]
pub struct PolicySet<'a> {
    pub current: &'a PolicyParams,
    /// Snapshot whose top-p support masks the action space.
    pub masker: &'a PolicyParams,
    /// Frozen pre-RL policy for the KL penalty.
    pub reference: &'a PolicyParams,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchReport {
    pub skipped: usize,
    pub errors: Vec<String>,
}

struct Episode {
    example: usize,
    generated: Sentence,
    steps: Vec<StepRecord>,
    values: Vec<f64>,
    kl: Vec<f64>,
    kl_literal: f64,
    ratio: f64,
    terminal: TerminalReward,
}

fn run_episode(
    policies: PolicySet<'_>,
    example: &LabeledExample,
    index: usize,
    gen: &GenConfig,
    scorers: &Scorers,
    reward: &dyn EpisodeReward,
    exec: Execution,
) -> Result<Episode> {
    let winner = generate_candidates(
        policies.current,
        policies.masker,
        &example.sentence,
        gen,
        scorers,
        exec,
    )?
    .swap_remove(0);
    let terminal = reward.score(example, &winner.sentence)?;
    let mut values = Vec::with_capacity(winner.steps.len());
    let mut kl = Vec::with_capacity(winner.steps.len());
    let mut kl_literal = 0.0;
    let mut last_ratio = 1.0;
    for step in &winner.steps {
        let reference = policies.reference.dist_from_features(&step.features).restrict(step.mask())?;
        kl.push(kl_step(&step.dist, &reference)?);
        kl_literal += kl_literal_term(step.dist.probs[step.action], reference.probs[step.action]);
        values.push(policies.current.value_from_features(&step.features));
        // current over sampling policy at the taken action
        let (lp_cur, _) = policies
            .current
            .logprob_coeffs(&step.features, step.action, Some(step.mask()))?;
        last_ratio = (lp_cur - step.logprob).exp();
    }
    Ok(Episode {
        example: index,
        generated: winner.sentence,
        steps: winner.steps,
        values,
        kl,
        kl_literal,
        ratio: last_ratio,
        terminal,
    })
}

/// Samples and scores one episode per example. The generator seed for
/// example `i` of the batch is derived from `gen.seed` and `i`. Failed
/// examples are skipped and reported.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts(
    policies: PolicySet<'_>,
    batch: &[(usize, &LabeledExample)],
    gen: &GenConfig,
    scorers: &Scorers,
    reward: &dyn EpisodeReward,
    reward_cfg: &RewardConfig,
    ppo: &PpoConfig,
    exec: Execution,
) -> Result<(Vec<Rollout>, BatchReport)> {
    if batch.is_empty() {
        return Err(Error::invalid("cannot collect rollouts for an empty batch"));
    }
    let results = exec.map_range(batch.len(), |i| {
        let (index, example) = batch[i];
        let cfg = GenConfig {
            seed: derive_seed(gen.seed, &[i as u64]),
            ..gen.clone()
        };
        run_episode(policies, example, index, &cfg, scorers, reward, exec)
    });

    let mut report = BatchReport::default();
    let mut episodes = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(e) => episodes.push(e),
            Err(e) => {
                report.skipped += 1;
                report.errors.push(e.to_string());
            }
        }
    }

    let terminals: Vec<f64> = episodes.iter().map(|e| e.terminal.terminal).collect();
    let shaped = if reward_cfg.normalize && terminals.len() > 1 {
        let n = terminals.len() as f64;
        let mean = terminals.iter().sum::<f64>() / n;
        let sd = (terminals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
        terminals.iter().map(|t| (t - mean) / sd.max(1e-8)).collect()
    } else {
        terminals
    };

    let mut rollouts = Vec::with_capacity(episodes.len());
    for (episode, (e, terminal)) in episodes.into_iter().zip(shaped).enumerate() {
        let mut ratios = vec![1.0; e.steps.len()];
        *ratios.last_mut().expect("episodes are nonempty") = e.ratio;
        let rewards = assemble_token_rewards(terminal, &e.kl, &ratios, reward_cfg)?;
        let (advantages, returns) = gae(&rewards, &e.values, ppo.gamma, ppo.gae_lambda)?;
        let trace = RewardTrace {
            epoch: 0,
            episode,
            confusion: e.terminal.confusion,
            mi: e.terminal.mi,
            terminal: e.terminal.terminal,
            kl_sum: e.kl.iter().sum(),
            token_rewards: rewards.clone(),
            kl_literal: e.kl_literal,
            ratio: e.ratio,
        };
        rollouts.push(Rollout {
            episode,
            example: e.example,
            generated: e.generated,
            steps: e.steps,
            values: e.values,
            kl: e.kl,
            rewards,
            advantages,
            returns,
            terminal: e.terminal,
            trace,
        });
    }
    Ok((rollouts, report))
}
