//! Synthetic keyword-sentiment task used for end-to-end checks.
//!
//! Labels are decided by trigger words. Every trigger has two substitutes
//! that the paraphrase corpus swaps in for it. In the classifier's training
//! data a substitute only ever appears negated ("was really not stellar"),
//! labeled with the opposite class, so a victim trained on it associates the
//! bare substitute with the wrong class and is fooled by the swap. Negated
//! sentences are attackable the other way round: the corpus swaps their
//! substitute back to its trigger.
//!
//! Every sentence has the fixed shape `det subject verb adverb [not] word`,
//! which keeps the position of the swapped word learnable for the
//! bag-of-words paraphrase policy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus_filter::FilterConfig;
use crate::error::{Error, Result};
use crate::policy::ParaphraserFitConfig;
use crate::textcore::{LabeledExample, ParaphrasePair, Sentence};
use crate::victim::ClassifierTrainConfig;

pub const DETERMINERS: [&str; 3] = ["the", "this", "that"];
pub const SUBJECTS: [&str; 10] = [
    "movie", "film", "plot", "story", "cast", "acting", "script", "ending", "soundtrack", "director",
];
pub const VERBS: [&str; 4] = ["was", "is", "felt", "seemed"];
pub const ADVERBS: [&str; 6] = ["really", "truly", "quite", "very", "rather", "so"];

/// `(trigger, [substitutes])` for class 1.
pub const POSITIVE: [(&str, [&str; 2]); 3] = [
    ("great", ["stellar", "splendid"]),
    ("good", ["nice", "decent"]),
    ("superb", ["brilliant", "lovely"]),
];
/// `(trigger, [substitutes])` for class 0.
pub const NEGATIVE: [(&str, [&str; 2]); 3] = [
    ("awful", ["dreadful", "horrid"]),
    ("bad", ["poor", "weak"]),
    ("dull", ["boring", "bland"]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeywordTaskConfig {
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub pair_count: usize,
    /// Probability that a task sentence is a negated substitute of the
    /// opposite class instead of a plain trigger.
    pub negated_rate: f64,
    /// Probability that a paraphrase target is a verbatim copy.
    pub keep_trigger_rate: f64,
    /// Fraction of paraphrase pairs replaced by unrelated targets.
    pub noise_rate: f64,
}

impl Default for KeywordTaskConfig {
    fn default() -> Self {
        KeywordTaskConfig {
            seed: 7,
            train_size: 320,
            test_size: 200,
            pair_count: 2000,
            negated_rate: 0.3,
            keep_trigger_rate: 0.3,
            noise_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordTask {
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub pairs: Vec<ParaphrasePair>,
}

impl KeywordTask {
    /// Sentences the reference language model is fit on.
    pub fn lm_corpus(&self) -> Vec<Sentence> {
        self.train
            .iter()
            .map(|e| e.sentence.clone())
            .chain(self.pairs.iter().map(|p| p.target.clone()))
            .collect()
    }
}

/// Filter thresholds for the synthetic corpus, whose near-copy pairs would
/// all fail the overlap maxima of the default configuration.
pub fn filter_config() -> FilterConfig {
    FilterConfig {
        unigram_overlap_max: 1.0,
        reorder_min: 0.0,
        semantic_sim_min: 0.5,
        trigram_overlap_max: 1.0,
    }
}

/// Victim settings for the task. Training close to convergence lets the
/// negation bigrams absorb the adversarial samples after retraining instead
/// of costing accuracy on negated test sentences.
pub fn victim_config() -> ClassifierTrainConfig {
    ClassifierTrainConfig {
        epochs: 20_000,
        learning_rate: 8.0,
        l2_penalty: 1e-6,
        ..ClassifierTrainConfig::default()
    }
}

/// Supervised fit of the reference paraphraser for the task. The longer fit
/// makes the copy/swap probabilities match the corpus rates, which is what
/// the RL stage starts from.
pub fn paraphraser_config() -> ParaphraserFitConfig {
    ParaphraserFitConfig {
        feature_dim: 513,
        steps: 3000,
        ..ParaphraserFitConfig::default()
    }
}

fn pick<'a, R: Rng>(rng: &mut R, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

pub const NEGATION: &str = "not";

struct Parts {
    words: Vec<String>,
    trigger_at: usize,
    /// Index into the trigger table of the word at `trigger_at`.
    trigger: usize,
    negated: bool,
}

fn sentence<R: Rng>(rng: &mut R, label: usize, negated_rate: f64) -> Parts {
    let (own, other) = if label == 1 {
        (&POSITIVE, &NEGATIVE)
    } else {
        (&NEGATIVE, &POSITIVE)
    };
    let mut words: Vec<String> = vec![pick(rng, &DETERMINERS).into(), pick(rng, &SUBJECTS).into(), pick(rng, &VERBS).into()];
    words.push(pick(rng, &ADVERBS).into());
    let negated = rng.gen_bool(negated_rate);
    let trigger = if negated {
        words.push(NEGATION.into());
        let t = rng.gen_range(0..other.len());
        words.push(pick(rng, &other[t].1).into());
        t
    } else {
        let t = rng.gen_range(0..own.len());
        words.push(own[t].0.into());
        t
    };
    Parts {
        trigger_at: words.len() - 1,
        words,
        trigger,
        negated,
    }
}

fn labeled<R: Rng>(rng: &mut R, n: usize, cfg: &KeywordTaskConfig) -> Vec<LabeledExample> {
    (0..n)
        .map(|i| {
            let label = i % 2;
            let p = sentence(rng, label, cfg.negated_rate);
            LabeledExample::new(p.words.join(" "), label)
        })
        .collect()
}

/// Generates the task deterministically from `cfg.seed`.
pub fn keyword_task(cfg: &KeywordTaskConfig) -> Result<KeywordTask> {
    for (name, v) in [
        ("negated_rate", cfg.negated_rate),
        ("keep_trigger_rate", cfg.keep_trigger_rate),
        ("noise_rate", cfg.noise_rate),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
        }
    }
    if cfg.train_size < 2 || cfg.test_size < 2 {
        return Err(Error::invalid("train and test sets need at least one example per class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train = labeled(&mut rng, cfg.train_size, cfg);
    let mut test = labeled(&mut rng, cfg.test_size, cfg);
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);

    let mut pairs = Vec::with_capacity(cfg.pair_count);
    for i in 0..cfg.pair_count {
        let label = i % 2;
        let p = sentence(&mut rng, label, cfg.negated_rate);
        let source = p.words.join(" ");
        let target = if rng.gen_bool(cfg.noise_rate) {
            // unrelated sentence; the similarity filter should drop it
            sentence(&mut rng, 1 - label, 0.0).words.join(" ")
        } else {
            if rng.gen_bool(cfg.keep_trigger_rate) {
                source.clone()
            } else {
                // trigger -> substitute, or negated substitute -> its trigger
                let mut words = p.words.clone();
                words[p.trigger_at] = if p.negated {
                    let table = if label == 1 { &NEGATIVE } else { &POSITIVE };
                    table[p.trigger].0.into()
                } else {
                    let table = if label == 1 { &POSITIVE } else { &NEGATIVE };
                    pick(&mut rng, &table[p.trigger].1).into()
                };
                words.join(" ")
            }
        };
        pairs.push(ParaphrasePair::new(source, target));
    }
    Ok(KeywordTask { train, test, pairs })
}
