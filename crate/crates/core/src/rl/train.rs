//! The epoch loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GenConfig;
use crate::par::{derive_seed, Execution};
use crate::policy::PolicyParams;
use crate::reward::{EpisodeReward, RewardConfig, RewardTrace, VictimReward};
use crate::rl::lion::{Lion, LionConfig};
use crate::rl::nlpo::NlpoConfig;
use crate::rl::ppo::{ppo_step, PpoConfig};
use crate::rl::rollout::{collect_rollouts, PolicySet, Rollout};
use crate::scorers::Scorers;
use crate::textcore::{write_jsonl, LabeledExample};
use crate::victim::Victim;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainLoopConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub collapse_window: usize,
    pub collapse_reward_floor: f64,
}

impl Default for TrainLoopConfig {
    fn default() -> Self {
        TrainLoopConfig {
            epochs: 30,
            batch_size: 32,
            seed: 0,
            collapse_window: 5,
            collapse_reward_floor: 0.05,
        }
    }
}

impl TrainLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch_size must be at least 1".into()));
        }
        if self.collapse_window == 0 {
            return Err(Error::Config("train.collapse_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Every knob of policy training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RlConfig {
    #[serde(rename = "loop")]
    pub train: TrainLoopConfig,
    pub ppo: PpoConfig,
    pub nlpo: NlpoConfig,
    pub lion: LionConfig,
    pub reward: RewardConfig,
    pub generator: GenConfig,
}

impl RlConfig {
    /// Defaults with the desk-scale Lion learning rate.
    pub fn desk() -> Self {
        RlConfig {
            lion: LionConfig::desk(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.ppo.validate()?;
        self.nlpo.validate()?;
        self.lion.validate()?;
        self.reward.validate()?;
        self.generator.validate()
    }

    fn gen_for_batch(&self, epoch: usize, batch: usize) -> GenConfig {
        GenConfig {
            seed: derive_seed(self.train.seed, &[epoch as u64, batch as u64]),
            top_p: self.nlpo.top_p,
            ..self.generator.clone()
        }
    }
}

/// Per-epoch summary. Epoch 0 is the untrained policy evaluated over the
/// full dataset; means are over scored episodes, `mean_kl` is the mean of
/// per-episode KL sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_confusion: f64,
    pub mean_mi: f64,
    pub mean_kl: f64,
    pub mean_terminal: f64,
    pub loss: Option<f64>,
    pub collapsed: bool,
    pub episodes: usize,
    pub skipped: usize,
    pub updates: usize,
    pub mean_kl_literal: f64,
    pub mean_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub traces: Vec<RewardTrace>,
}

impl TrainingLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn write_epochs(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(&self.epochs, path)
    }

    pub fn write_traces(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(&self.traces, path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: TrainingLog,
}

#[derive(Default)]
struct EpochAcc {
    confusion: f64,
    mi: f64,
    kl: f64,
    kl_literal: f64,
    terminal: f64,
    ratio: f64,
    episodes: usize,
    skipped: usize,
    loss: f64,
    loss_terms: usize,
}

impl EpochAcc {
    fn add(&mut self, rollouts: &[Rollout], skipped: usize) {
        for r in rollouts {
            self.confusion += r.terminal.confusion;
            self.mi += r.terminal.mi;
            self.terminal += r.terminal.terminal;
            self.kl += r.trace.kl_sum;
            self.kl_literal += r.trace.kl_literal;
            self.ratio += r.trace.ratio;
        }
        self.episodes += rollouts.len();
        self.skipped += skipped;
    }

    fn finish(self, epoch: usize, updates: usize) -> EpochRecord {
        let n = self.episodes.max(1) as f64;
        EpochRecord {
            epoch,
            mean_confusion: self.confusion / n,
            mean_mi: self.mi / n,
            mean_kl: self.kl / n,
            mean_terminal: self.terminal / n,
            loss: (self.loss_terms > 0).then(|| self.loss / self.loss_terms as f64),
            collapsed: false,
            episodes: self.episodes,
            skipped: self.skipped,
            updates,
            mean_kl_literal: self.kl_literal / n,
            mean_ratio: self.ratio / n,
        }
    }
}

fn record_traces(log: &mut TrainingLog, epoch: usize, offset: usize, rollouts: &[Rollout]) {
    for r in rollouts {
        let mut t = r.trace.clone();
        t.epoch = epoch;
        t.episode = offset + r.episode;
        log.traces.push(t);
    }
}

/// Trains against the victim with the confusion plus MI reward.
pub fn train(
    policy_init: &PolicyParams,
    victim: &dyn Victim,
    dataset: &[LabeledExample],
    scorers: &Scorers,
    cfg: &RlConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    let reward = VictimReward {
        victim,
        scorers,
        config: cfg.reward,
    };
    train_with_reward(policy_init, dataset, scorers, &reward, cfg, exec)
}

/// Trains with an arbitrary terminal reward. On collapse the error carries
/// the log up to and including the collapsing epoch.
pub fn train_with_reward(
    policy_init: &PolicyParams,
    dataset: &[LabeledExample],
    scorers: &Scorers,
    reward: &dyn EpisodeReward,
    cfg: &RlConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    policy_init.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train a policy on an empty dataset"));
    }
    let lp = &cfg.train;
    let reference = policy_init.clone();
    let mut policy = policy_init.clone();
    let mut masker = policy_init.clone();
    let mut opt = Lion::for_policy(cfg.lion, &policy);
    let mut updates = 0usize;
    let mut log = TrainingLog::default();

    // epoch 0: the starting policy, no updates
    let indexed: Vec<(usize, &LabeledExample)> = dataset.iter().enumerate().collect();
    let mut acc = EpochAcc::default();
    for (b, batch) in indexed.chunks(lp.batch_size).enumerate() {
        let policies = PolicySet {
            current: &policy,
            masker: &masker,
            reference: &reference,
        };
        let (rollouts, report) = collect_rollouts(
            policies,
            batch,
            &cfg.gen_for_batch(0, b),
            scorers,
            reward,
            &cfg.reward,
            &cfg.ppo,
            exec,
        )?;
        record_traces(&mut log, 0, b * lp.batch_size, &rollouts);
        acc.add(&rollouts, report.skipped);
    }
    log.epochs.push(acc.finish(0, 0));

    let mut below_floor = 0usize;
    for epoch in 1..=lp.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(lp.seed, &[epoch as u64])));
        let mut acc = EpochAcc::default();
        for (b, chunk) in order.chunks(lp.batch_size).enumerate() {
            let batch: Vec<(usize, &LabeledExample)> = chunk.iter().map(|&i| (i, &dataset[i])).collect();
            let (rollouts, report) = {
                let policies = PolicySet {
                    current: &policy,
                    masker: &masker,
                    reference: &reference,
                };
                collect_rollouts(
                    policies,
                    &batch,
                    &cfg.gen_for_batch(epoch, b),
                    scorers,
                    reward,
                    &cfg.reward,
                    &cfg.ppo,
                    exec,
                )?
            };
            record_traces(&mut log, epoch, b * lp.batch_size, &rollouts);
            acc.add(&rollouts, report.skipped);
            if rollouts.is_empty() {
                continue;
            }
            for _ in 0..cfg.ppo.update_epochs_per_batch {
                let (stats, grad) = ppo_step(&policy, &rollouts, &cfg.ppo, exec)?;
                acc.loss += stats.loss;
                acc.loss_terms += 1;
                opt.step(&mut policy, &grad);
                updates += 1;
                if updates.is_multiple_of(cfg.nlpo.mask_update_period) {
                    masker = policy.clone();
                }
            }
        }
        let mut record = acc.finish(epoch, updates);
        log::info!(
            "epoch {epoch}: confusion {:.4} mi {:.4} kl {:.4} terminal {:.4}",
            record.mean_confusion,
            record.mean_mi,
            record.mean_kl,
            record.mean_terminal
        );
        if record.mean_terminal < lp.collapse_reward_floor {
            below_floor += 1;
        } else {
            below_floor = 0;
        }
        if below_floor >= lp.collapse_window {
            record.collapsed = true;
            log.epochs.push(record);
            return Err(Error::GeneratorCollapse {
                epoch,
                log: Box::new(log),
            });
        }
        log.epochs.push(record);
    }
    Ok(TrainOutcome { params: policy, log })
}
