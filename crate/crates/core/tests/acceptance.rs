//! End-to-end acceptance criteria. Each test prints one PASS/FAIL line.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tprl_core::adversarial::{
    adversarial_train, build_adversarial_set, build_adversarial_test, evaluate_pair, transfer_experiment, AdvSample,
    EvalPair, NamedPolicy, NamedVictim, TransferData, DEFAULT_MI_FLOOR,
};
use tprl_core::corpus_filter::{filter_corpus, kendall_tau_shared, FilterConfig, FilterStage};
use tprl_core::generator::GenConfig;
use tprl_core::pipeline::{run_pipeline, smoke_workspace, write_synthetic_workspace, PipelineConfig};
use tprl_core::policy::{fit_paraphraser, ActionDistribution, PolicyParams};
use tprl_core::reward::{assemble_token_rewards, kl_step, terminal_reward, RewardConfig};
use tprl_core::rl::nlpo::{nlpo_mask, top_p_support};
use tprl_core::rl::{train, RlConfig, TrainingLog};
use tprl_core::scorers::{HashedEmbedder, NliBackend, NliVerdict, Scorers};
use tprl_core::synthetic::{self, keyword_task, KeywordTask, KeywordTaskConfig};
use tprl_core::textcore::{LabeledExample, ParaphrasePair, Sentence};
use tprl_core::victim::{train_classifier, ClassifierParams, ClassifierTrainConfig, Victim};
use tprl_core::Execution;

const SEQ: Execution = Execution::Sequential;

/// Writes to the process's stdout directly so the line survives test output
/// capture.
fn report(n: u32, pass: bool, detail: impl AsRef<str>) {
    let line = format!("criterion {n:>2}: {} ({})\n", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

// ---------------------------------------------------------------- 1: filter

const FILTER_VOCAB: usize = 40;

fn words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| format!("w{}", rng.gen_range(0..FILTER_VOCAB))).collect()
}

/// 500 pairs cycling through near copies, order-preserving rewrites,
/// unrelated targets, half swaps and reordered rewrites.
fn planted_corpus() -> Vec<ParaphrasePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..500)
        .map(|i| {
            let n = rng.gen_range(8..13);
            let src = words(&mut rng, n);
            let tgt = match i % 5 {
                0 => {
                    let mut t = src.clone();
                    let k = rng.gen_range(0..n);
                    t[k] = format!("x{k}");
                    t
                }
                1 => {
                    let mut t = src[..4].to_vec();
                    t.extend(words(&mut rng, 6));
                    t
                }
                2 => {
                    let mut t = words(&mut rng, n);
                    t.push(src[0].clone());
                    t
                }
                3 => {
                    let mut t: Vec<String> = src[n / 2..].iter().chain(&src[..n / 2]).cloned().collect();
                    t[0] = "head".into();
                    t
                }
                _ => {
                    let mut t: Vec<String> = src[..n / 2].iter().rev().cloned().collect();
                    t.extend(words(&mut rng, n / 2));
                    t
                }
            };
            ParaphrasePair::new(src.join(" "), tgt.join(" "))
        })
        .collect()
}

fn brute_f1(a: &[String], b: &[String], n: usize) -> f64 {
    if a.len() < n || b.len() < n {
        return 0.0;
    }
    let ga: Vec<&[String]> = a.windows(n).collect();
    let gb: Vec<&[String]> = b.windows(n).collect();
    let mut used = vec![false; gb.len()];
    let mut common = 0usize;
    for g in &ga {
        if let Some(j) = (0..gb.len()).find(|&j| !used[j] && gb[j] == *g) {
            used[j] = true;
            common += 1;
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / ga.len() as f64;
    let r = common as f64 / gb.len() as f64;
    2.0 * p * r / (p + r)
}

fn brute_tau(a: &[String], b: &[String]) -> Option<f64> {
    let once = |s: &[String], w: &String| s.iter().filter(|x| *x == w).count() == 1;
    let shared: Vec<(usize, usize)> = a
        .iter()
        .enumerate()
        .filter(|(_, w)| once(a, w) && once(b, w))
        .map(|(i, w)| (i, b.iter().position(|x| x == w).unwrap()))
        .collect();
    let k = shared.len();
    if k < 2 {
        return None;
    }
    let mut score = 0i64;
    for i in 0..k {
        for j in i + 1..k {
            let s = (shared[i].0 as i64 - shared[j].0 as i64).signum() * (shared[i].1 as i64 - shared[j].1 as i64).signum();
            score += s;
        }
    }
    Some(score as f64 / (k * (k - 1) / 2) as f64)
}

fn brute_cosine(a: &[String], b: &[String], e: &HashedEmbedder) -> f64 {
    let vec = |s: &[String]| {
        let mut v = vec![0.0; e.dim];
        for t in s {
            let (i, sign) = e.bucket(t, false);
            v[i] += sign;
        }
        for w in s.windows(2) {
            let (i, sign) = e.bucket(&format!("{} {}", w[0], w[1]), true);
            v[i] += sign;
        }
        v
    };
    let (va, vb) = (vec(a), vec(b));
    let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn brute_stage(p: &ParaphrasePair, cfg: &FilterConfig, e: &HashedEmbedder) -> Option<FilterStage> {
    let (a, b) = (&p.source.tokens, &p.target.tokens);
    if brute_f1(a, b, 1) > cfg.unigram_overlap_max {
        Some(FilterStage::Unigram)
    } else if brute_tau(a, b).is_some_and(|t| t > 1.0 - cfg.reorder_min) {
        Some(FilterStage::Reorder)
    } else if brute_cosine(a, b, e) < cfg.semantic_sim_min {
        Some(FilterStage::Semantic)
    } else if brute_f1(a, b, 3) > cfg.trigram_overlap_max {
        Some(FilterStage::Trigram)
    } else {
        None
    }
}

#[test]
fn c01_filter_matches_brute_force() {
    let start = Instant::now();
    let corpus = planted_corpus();
    let e = HashedEmbedder::default();
    let configs = [
        FilterConfig::default(),
        FilterConfig {
            unigram_overlap_max: 0.95,
            reorder_min: 0.3,
            semantic_sim_min: 0.3,
            trigram_overlap_max: 0.3,
        },
    ];
    let mut mismatches = 0usize;
    let mut hit: BTreeMap<String, usize> = BTreeMap::new();
    let mut retained_total = 0;
    for cfg in &configs {
        let (kept, rep) = filter_corpus(&corpus, cfg, &e, SEQ).unwrap();
        let mut want_kept = Vec::new();
        let mut want_removed: BTreeMap<String, usize> = FilterStage::ORDER.iter().map(|s| (s.name().to_string(), 0)).collect();
        for p in &corpus {
            match brute_stage(p, cfg, &e) {
                Some(s) => *want_removed.get_mut(s.name()).unwrap() += 1,
                None => want_kept.push((p.source.clone(), p.target.clone())),
            }
        }
        let got_kept: Vec<_> = kept.iter().map(|p| (p.source.clone(), p.target.clone())).collect();
        mismatches += got_kept.len().abs_diff(want_kept.len());
        mismatches += got_kept.iter().zip(&want_kept).filter(|(g, w)| g != w).count();
        for (k, v) in &want_removed {
            mismatches += rep.removed_by_filter[k].abs_diff(*v);
            *hit.entry(k.clone()).or_default() += v;
        }
        retained_total += got_kept.len();
    }
    let elapsed = start.elapsed();
    let every_filter_hit = hit.values().all(|&v| v > 0) && retained_total > 0;
    let pass = mismatches == 0 && every_filter_hit && elapsed < Duration::from_secs(5);
    report(
        1,
        pass,
        format!("{mismatches} mismatches over 2 configs x 500 pairs, removals {hit:?}, retained {retained_total}, {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2: Kendall

#[test]
fn c02_kendall_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut max_err = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=20);
        let mut perm: Vec<usize> = (0..k).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let a: Vec<String> = (0..k).map(|i| format!("t{i}")).collect();
        let b: Vec<String> = perm.iter().map(|&i| format!("t{i}")).collect();
        // position of a[i] in b is inv[i]
        let mut inv = vec![0; k];
        for (pos, &i) in perm.iter().enumerate() {
            inv[i] = pos;
        }
        let mut s = 0i64;
        for i in 0..k {
            for j in i + 1..k {
                s += if inv[i] < inv[j] { 1 } else { -1 };
            }
        }
        let want = s as f64 / (k * (k - 1) / 2) as f64;
        let got = kendall_tau_shared(&Sentence::from_tokens(&a), &Sentence::from_tokens(&b)).unwrap();
        max_err = max_err.max((got - want).abs());
    }
    let pass = max_err <= 1e-12;
    report(2, pass, format!("1000 permutations, max abs error {max_err:e}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 3: gradients

#[test]
fn c03_gradients_match_finite_differences() {
    let mut worst = [0.0f64; 3];
    let configs = 100;
    for seed in 0..configs {
        for (w, e) in worst.iter_mut().zip(common::gradient_errors(seed)) {
            *w = w.max(e);
        }
    }
    let pass = worst.iter().all(|&e| e < 1e-4);
    report(
        3,
        pass,
        format!(
            "{configs} configurations, max relative error logprob {:.2e}, value {:.2e}, ppo loss {:.2e}",
            worst[0], worst[1], worst[2]
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4: NLPO mask

fn random_probs(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v = rng.gen_range(1..=64);
    // coarse weights produce ties
    let w: Vec<f64> = if rng.gen_bool(0.3) {
        (0..v).map(|_| rng.gen_range(0..4) as f64 + 1.0).collect()
    } else {
        (0..v).map(|_| rng.gen::<f64>().powi(3) + 1e-6).collect()
    };
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

/// Smallest descending prefix whose mass exceeds `p`, recomputing every
/// prefix sum from scratch.
fn brute_top_p(probs: &[f64], p: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // selection order: highest probability, lowest index on ties
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            let (a, b) = (order[i], order[j]);
            if probs[b] > probs[a] || (probs[b] == probs[a] && b < a) {
                order.swap(i, j);
            }
        }
    }
    let m = (1..=order.len())
        .find(|&m| order[..m].iter().map(|&j| probs[j]).sum::<f64>() > p)
        .unwrap_or(order.len());
    let mut keep = vec![false; probs.len()];
    for &j in &order[..m] {
        keep[j] = true;
    }
    keep
}

#[test]
fn c04_nlpo_mask_is_minimal_top_p_prefix() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut support_mismatch, mut worst_sum) = (0usize, 0.0f64);
    for _ in 0..10_000 {
        let probs = random_probs(&mut rng);
        for p in [0.5, 0.9, 0.95, 1.0] {
            let want = brute_top_p(&probs, p);
            if top_p_support(&probs, p) != want {
                support_mismatch += 1;
            }
            let masked = nlpo_mask(&ActionDistribution::unmasked(probs.clone()), p);
            if masked.mask.as_deref() != Some(&want[..]) || masked.probs.iter().zip(&want).any(|(&q, &k)| !k && q != 0.0) {
                support_mismatch += 1;
            }
            worst_sum = worst_sum.max((masked.probs.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let pass = support_mismatch == 0 && worst_sum <= 1e-9;
    report(
        4,
        pass,
        format!("10000 distributions x 4 top-p values, {support_mismatch} support mismatches, max |sum - 1| {worst_sum:e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5: KL

fn softmax(rng: &mut ChaCha8Rng, v: usize) -> ActionDistribution {
    let logits: Vec<f64> = (0..v).map(|_| rng.gen_range(-6.0..6.0)).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    ActionDistribution::unmasked(e.iter().map(|x| x / z).collect())
}

#[test]
fn c05_kl_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut negative, mut nonzero_self) = (0usize, 0usize);
    for _ in 0..10_000 {
        let v = rng.gen_range(2..=32);
        let p = softmax(&mut rng, v);
        let q = softmax(&mut rng, v);
        if kl_step(&p, &q).unwrap() < 0.0 {
            negative += 1;
        }
        if kl_step(&p, &p).unwrap() != 0.0 {
            nonzero_self += 1;
        }
    }
    let hand = 0.8 * 1.6f64.ln() + 0.2 * 0.4f64.ln();
    let got = kl_step(
        &ActionDistribution::unmasked(vec![0.8, 0.2]),
        &ActionDistribution::unmasked(vec![0.5, 0.5]),
    )
    .unwrap();
    let example_ok = (got - hand).abs() <= 1e-9 && (got - 0.19274).abs() < 5e-6;
    let pass = negative == 0 && nonzero_self == 0 && example_ok;
    report(
        5,
        pass,
        format!("10000 pairs: {negative} negative, {nonzero_self} nonzero self-KL; (0.8,0.2)||(0.5,0.5) = {got:.9}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6: reward

struct FixedVictim(f64);

impl Victim for FixedVictim {
    fn num_classes(&self) -> usize {
        2
    }
    fn predict_proba(&self, _: &Sentence) -> Vec<f64> {
        vec![1.0 - self.0, self.0]
    }
}

struct FixedNli(f64);

impl NliBackend for FixedNli {
    fn nli(&self, _: &Sentence, _: &Sentence) -> tprl_core::Result<NliVerdict> {
        NliVerdict::checked(self.0, 0.0, 1.0 - self.0)
    }
}

fn fixed_terminal(p_c: f64, mi: f64, cfg: &RewardConfig) -> f64 {
    let mut scorers = Scorers::reference(&[]);
    scorers.nli = Arc::new(FixedNli(mi));
    let original = LabeledExample::new("a b", 1);
    terminal_reward(&FixedVictim(p_c), &scorers, &original, &Sentence::new("c d"), cfg)
        .unwrap()
        .terminal
}

/// (terminal, kls, ratios, config, expected token rewards)
type TokenCase = (f64, Vec<f64>, Vec<f64>, RewardConfig, Vec<f64>);

#[test]
fn c06_reward_arithmetic() {
    let d = RewardConfig::default();
    let mut mismatches = Vec::new();
    for (p_c, mi, want) in [(1.0, 1.0, 0.5), (0.0, 0.0, 0.5), (0.2, 0.8, 0.8)] {
        let got = fixed_terminal(p_c, mi, &d);
        if got != want {
            mismatches.push(format!("terminal({p_c},{mi}) = {got}"));
        }
    }
    let cases: [TokenCase; 3] = [
        (0.7, vec![0.0], vec![1.0], d, vec![0.7]),
        (
            0.9,
            vec![0.3, 0.1, 0.4],
            vec![1.0, 1.0, 0.5],
            RewardConfig { beta: 0.0, ..d },
            vec![0.0, 0.0, 0.5 * 0.9],
        ),
        (
            1.0,
            vec![0.1, 0.0, 0.2],
            vec![1.0, 1.0, 1.0],
            d,
            vec![-0.2 * 0.1, 0.0, 1.0 * 1.0 - 0.2 * 0.2],
        ),
    ];
    for (terminal, kls, ratios, cfg, want) in &cases {
        let got = assemble_token_rewards(*terminal, kls, ratios, cfg).unwrap();
        if &got != want {
            mismatches.push(format!("tokens {kls:?} -> {got:?}"));
        }
    }
    let tabled = assemble_token_rewards(1.0, &[0.1, 0.0, 0.2], &[1.0; 3], &d).unwrap();
    let decimal = [-0.02, 0.0, 0.96];
    if tabled.iter().zip(decimal).any(|(g, w)| (g - w).abs() > 1e-15) {
        mismatches.push(format!("tabled example {tabled:?}"));
    }
    let mut out_of_range = 0;
    for i in 0..=20 {
        for j in 0..=20 {
            let t = fixed_terminal(i as f64 / 20.0, j as f64 / 20.0, &d);
            if !(0.0..=1.0).contains(&t) {
                out_of_range += 1;
            }
        }
    }
    let pass = mismatches.is_empty() && out_of_range == 0;
    report(
        6,
        pass,
        format!("{} exact mismatches {mismatches:?}, {out_of_range} of 441 grid terminals outside [0, 1]", mismatches.len()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7-9, 11-12: synthetic task

struct Synthetic {
    task: KeywordTask,
    scorers: Scorers,
    victim_cfg: ClassifierTrainConfig,
    victim: ClassifierParams,
    reference: PolicyParams,
    trained: PolicyParams,
    log: TrainingLog,
    elapsed: Duration,
}

fn synthetic() -> &'static Synthetic {
    static CELL: OnceLock<Synthetic> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let task = keyword_task(&KeywordTaskConfig::default()).unwrap();
        let scorers = Scorers::reference(&task.lm_corpus());
        let (pairs, _) = filter_corpus(&task.pairs, &synthetic::filter_config(), scorers.embedder.as_ref(), SEQ).unwrap();
        let victim_cfg = synthetic::victim_config();
        let victim = train_classifier(&task.train, 2, &victim_cfg, SEQ).unwrap();
        let extra: Vec<_> = task.train.iter().map(|e| e.sentence.clone()).collect();
        let (reference, _) = fit_paraphraser(&pairs, &extra, &synthetic::paraphraser_config(), SEQ).unwrap();
        let out = train(&reference, &victim, &task.train, &scorers, &RlConfig::desk(), SEQ).unwrap();
        Synthetic {
            task,
            scorers,
            victim_cfg,
            victim,
            reference,
            trained: out.params,
            log: out.log,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn c07_rl_raises_confusion_and_keeps_mi() {
    let s = synthetic();
    let vocab = s.reference.vocab_size();
    let first = &s.log.epochs[0];
    let last = s.log.epochs.last().unwrap();
    let min_mi = s.log.epochs.iter().map(|e| e.mean_mi).fold(f64::INFINITY, f64::min);
    let pass = vocab <= 200
        && first.epoch == 0
        && last.epoch == 30
        && first.mean_confusion < 0.25
        && last.mean_confusion > 0.60
        && min_mi >= 0.5
        && s.elapsed < Duration::from_secs(600);
    report(
        7,
        pass,
        format!(
            "V={vocab}, confusion {:.3} -> {:.3}, min MI {:.3}, {:.1?} single-threaded",
            first.mean_confusion, last.mean_confusion, min_mi, s.elapsed
        ),
    );
    assert!(pass);
}

struct AtResult {
    adv: Vec<AdvSample>,
    adv_test_len: usize,
    before: EvalPair,
    after: EvalPair,
    retrained: ClassifierParams,
}

fn at_run(s: &Synthetic) -> AtResult {
    let gen = GenConfig::default();
    let (adv, _) = build_adversarial_set(&s.trained, &s.task.train, &s.victim, &s.scorers, &gen, DEFAULT_MI_FLOOR, SEQ).unwrap();
    let (adv_test, _) = build_adversarial_test(&s.trained, &s.task.test, &s.victim, &s.scorers, &gen, DEFAULT_MI_FLOOR, SEQ).unwrap();
    let retrained = adversarial_train(&s.task.train, &adv, 2, &s.victim_cfg, SEQ).unwrap();
    AtResult {
        before: evaluate_pair(&s.victim, &s.task.test, &adv_test).unwrap(),
        after: evaluate_pair(&retrained, &s.task.test, &adv_test).unwrap(),
        adv_test_len: adv_test.len(),
        adv,
        retrained,
    }
}

#[test]
fn c08_adversarial_training_effect() {
    let s = synthetic();
    let a = at_run(s);
    let b = at_run(s);
    let deterministic = a.adv == b.adv && a.retrained == b.retrained && a.after == b.after;
    let gain = a.after.acc_adv - a.before.acc_adv;
    let drop = a.before.acc_orig - a.after.acc_orig;
    let pass = gain >= 0.05 && drop <= 0.01 && deterministic;
    report(
        8,
        pass,
        format!(
            "{} adversarial samples, {} adversarial test; adv acc {:.3} -> {:.3}, orig acc {:.3} -> {:.3}, deterministic {deterministic}",
            a.adv.len(),
            a.adv_test_len,
            a.before.acc_adv,
            a.after.acc_adv,
            a.before.acc_orig,
            a.after.acc_orig
        ),
    );
    assert!(pass);
}

#[test]
fn c09_mi_filter_is_sound() {
    let s = synthetic();
    let gen = GenConfig::default();
    let (adv, stats) = build_adversarial_set(&s.trained, &s.task.train, &s.victim, &s.scorers, &gen, DEFAULT_MI_FLOOR, SEQ).unwrap();
    // recompute every retained sample's MI from scratch
    let bad = adv
        .iter()
        .filter(|x| s.scorers.mutual_implication(&x.original.sentence, &x.adversarial).unwrap().mi < DEFAULT_MI_FLOOR)
        .count();
    let pass = bad == 0 && stats.retained == adv.len() && !adv.is_empty();
    report(9, pass, format!("{} of {} generated retained, {bad} below the floor", stats.retained, stats.generated));
    assert!(pass);
}

// ---------------------------------------------------------------- 10: determinism

#[test]
fn c10_run_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (task, cfg) = smoke_workspace();
    let path = write_synthetic_workspace(dir.path().join("data"), &task, &cfg).unwrap();
    let cfg = PipelineConfig::load(path).unwrap();
    let a = run_pipeline(&cfg, dir.path().join("a")).unwrap();
    let b = run_pipeline(&cfg, dir.path().join("b")).unwrap();
    let mut differing = Vec::new();
    for f in ["results.csv", "results.txt"] {
        if std::fs::read(dir.path().join("a").join(f)).unwrap() != std::fs::read(dir.path().join("b").join(f)).unwrap() {
            differing.push(f.to_string());
        }
    }
    if a.manifest.checkpoints != b.manifest.checkpoints {
        differing.push("checkpoint hashes".into());
    }
    let pass = differing.is_empty() && a.manifest.checkpoints.len() == 4;
    report(
        10,
        pass,
        format!("{} checkpoints compared, differing: {differing:?}", a.manifest.checkpoints.len()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 11: transfer

#[test]
fn c11_transfer_matrix() {
    let s = synthetic();
    let cfg_b = ClassifierTrainConfig {
        seed: 1,
        feature_dim: 1024,
        ..s.victim_cfg.clone()
    };
    let victim_b = train_classifier(&s.task.train, 2, &cfg_b, SEQ).unwrap();
    let rl_b = RlConfig {
        train: tprl_core::rl::TrainLoopConfig {
            seed: 1,
            ..RlConfig::desk().train
        },
        ..RlConfig::desk()
    };
    let policy_b = train(&s.reference, &victim_b, &s.task.train, &s.scorers, &rl_b, SEQ).unwrap().params;

    let victims = BTreeMap::from([
        ("lr_a".to_string(), NamedVictim { params: s.victim.clone(), config: s.victim_cfg.clone() }),
        ("lr_b".to_string(), NamedVictim { params: victim_b.clone(), config: cfg_b }),
    ]);
    let policies = BTreeMap::from([
        ("tprl_a".to_string(), NamedPolicy { params: s.trained.clone(), target: "lr_a".into() }),
        ("tprl_b".to_string(), NamedPolicy { params: policy_b.clone(), target: "lr_b".into() }),
    ]);
    let data = TransferData {
        train: &s.task.train,
        test: &s.task.test,
        num_classes: 2,
        gen: GenConfig::default(),
        mi_floor: DEFAULT_MI_FLOOR,
    };
    let m = transfer_experiment(&policies, &victims, &data, &s.scorers, SEQ).unwrap();

    // the None row against independently rebuilt adversarial test sets
    let mut none_exact = true;
    for (v, (victim, policy)) in [(&s.victim, &s.trained), (&victim_b, &policy_b)].into_iter().enumerate() {
        let (adv_test, _) = build_adversarial_test(policy, &s.task.test, victim, &s.scorers, &data.gen, data.mi_floor, SEQ).unwrap();
        none_exact &= evaluate_pair(victim, &s.task.test, &adv_test).unwrap() == m.none[v];
    }
    let a_on_b = m.cell("tprl_a", "lr_b").unwrap().acc_adv - m.none[1].acc_adv;
    let b_on_a = m.cell("tprl_b", "lr_a").unwrap().acc_adv - m.none[0].acc_adv;
    let complete = m.cells.len() == 2 && m.cells.iter().all(|r| r.len() == 2);
    let pass = complete && none_exact && (a_on_b > 0.0 || b_on_a > 0.0);
    report(
        11,
        pass,
        format!(
            "2x2 complete {complete}, None row exact {none_exact}, off-diagonal adv gains {a_on_b:+.3} (a on b), {b_on_a:+.3} (b on a), adv test sizes {:?}",
            m.adv_test_sizes
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 12: empty AT

#[test]
fn c12_empty_adversarial_set_is_identity() {
    let s = synthetic();
    let retrained = adversarial_train(&s.task.train, &[], 2, &s.victim_cfg, SEQ).unwrap();
    let bits = |p: &ClassifierParams| -> Vec<u64> { p.weights.iter().chain(&p.bias).map(|x| x.to_bits()).collect() };
    let pass = bits(&retrained) == bits(&s.victim) && retrained == s.victim;
    let differing = bits(&retrained).iter().zip(bits(&s.victim)).filter(|(a, b)| **a != *b).count();
    report(12, pass, format!("{differing} of {} parameters differ bitwise", s.victim.weights.len() + s.victim.bias.len()));
    assert!(pass);
}
