//! Helpers shared by the gradient checks.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tprl_core::generator::StepRecord;
use tprl_core::policy::{ParamGrad, PolicyParams, PolicyState, Vocab};
use tprl_core::reward::{RewardTrace, TerminalReward};
use tprl_core::rl::nlpo::top_p_support;
use tprl_core::rl::{ppo_loss_and_grad, PpoConfig, Rollout};
use tprl_core::textcore::Sentence;
use tprl_core::Execution;

pub const H: f64 = 1e-5;
pub const WORDS: [&str; 7] = ["a", "b", "cc", "dd", "eee", "f", "gg"];

pub fn random_params(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> PolicyParams {
    let mut p = PolicyParams::zeros(Vocab::from_tokens(&WORDS[..5]).unwrap(), dim).unwrap();
    p.logit_weights.iter_mut().for_each(|w| *w = rng.gen_range(-scale..scale));
    p.value_weights.iter_mut().for_each(|w| *w = rng.gen_range(-scale..scale));
    p
}

pub fn random_source(rng: &mut ChaCha8Rng) -> Sentence {
    let n = rng.gen_range(1..6);
    Sentence::from_tokens(&(0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>())
}

pub fn flat(g: &ParamGrad) -> Vec<f64> {
    g.logit.iter().chain(&g.value).copied().collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` over every logit and value weight.
pub fn numeric_grad(p: &PolicyParams, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    let n_logit = p.logit_weights.len();
    (0..n_logit + p.value_weights.len())
        .map(|k| {
            let mut plus = p.clone();
            let mut minus = p.clone();
            if k < n_logit {
                plus.logit_weights[k] += H;
                minus.logit_weights[k] -= H;
            } else {
                plus.value_weights[k - n_logit] += H;
                minus.value_weights[k - n_logit] -= H;
            }
            (f(&plus) - f(&minus)) / (2.0 * H)
        })
        .collect()
}

pub fn random_rollout(rng: &mut ChaCha8Rng, old: &PolicyParams, episode: usize) -> Rollout {
    let source = random_source(rng);
    let mut prefix = Vec::new();
    let mut steps = Vec::new();
    for _ in 0..source.len() {
        let x = old.encode_state(PolicyState { source: &source, prefix: &prefix });
        let support = top_p_support(&old.dist_from_features(&x).probs, 0.9);
        let dist = old.dist_from_features(&x).restrict(&support).unwrap();
        let allowed: Vec<usize> = (0..support.len()).filter(|&j| support[j]).collect();
        let a = allowed[rng.gen_range(0..allowed.len())];
        steps.push(StepRecord {
            logprob: dist.probs[a].ln(),
            features: x,
            dist,
            action: a,
        });
        prefix.push(a);
    }
    let n = steps.len();
    Rollout {
        episode,
        example: episode,
        generated: Sentence::from_tokens(&prefix.iter().map(|&a| old.vocab.token(a)).collect::<Vec<_>>()),
        steps,
        values: vec![0.0; n],
        kl: vec![0.0; n],
        rewards: vec![0.0; n],
        advantages: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        returns: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        terminal: TerminalReward { terminal: 0.0, confusion: 0.0, mi: 0.0 },
        trace: RewardTrace {
            epoch: 0,
            episode,
            confusion: 0.0,
            mi: 0.0,
            terminal: 0.0,
            kl_sum: 0.0,
            token_rewards: vec![0.0; n],
            kl_literal: 0.0,
            ratio: 1.0,
        },
    }
}

/// Relative errors of the analytic logprob, value and PPO-loss gradients
/// against central differences for one random configuration.
pub fn gradient_errors(seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_params(&mut rng, 13, 1.5);
    let source = random_source(&mut rng);
    let prefix: Vec<usize> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(0..p.vocab_size())).collect();
    let action = WORDS[rng.gen_range(0..5)];
    let state = PolicyState { source: &source, prefix: &prefix };
    let (_, g) = p.logprob_grad(state, action).unwrap();
    let logprob = rel_err(&flat(&g), &numeric_grad(&p, |q| q.logprob_grad(state, action).unwrap().0));
    let value = rel_err(&flat(&p.value_grad(state)), &numeric_grad(&p, |q| q.value(state)));

    let old = random_params(&mut rng, 11, 1.0);
    let mut current = old.clone();
    current.logit_weights.iter_mut().for_each(|w| *w += rng.gen_range(-0.3..0.3));
    current.value_weights.iter_mut().for_each(|w| *w += rng.gen_range(-0.3..0.3));
    let rollouts: Vec<Rollout> = (0..2).map(|e| random_rollout(&mut rng, &old, e)).collect();
    let cfg = PpoConfig::default();
    let (_, g) = ppo_loss_and_grad(&current, &rollouts, &cfg, Execution::Sequential).unwrap();
    let numeric = numeric_grad(&current, |q| ppo_loss_and_grad(q, &rollouts, &cfg, Execution::Sequential).unwrap().0.loss);
    [logprob, value, rel_err(&flat(&g), &numeric)]
}
