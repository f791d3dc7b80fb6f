//! Reference victim classifier: multinomial logistic regression over hashed
//! unigram and bigram features, trained full-batch so that a fixed
//! (data, config) pair always yields the same parameters bit for bit.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{add_assign, Execution};
use crate::textcore::{feature_hash, LabeledExample, Sentence};

const UNIGRAM_SALT: u64 = 0xc1a5_0001;
const BIGRAM_SALT: u64 = 0xc1a5_0002;
const GRAD_CHUNK: usize = 64;

/// Sparse feature vector: sorted, deduplicated `(index, value)` pairs.
pub type SparseVec = Vec<(usize, f64)>;

/// L2-normalized hashed counts of unigrams and bigrams.
pub fn hashed_features(tokens: &[String], dim: usize) -> SparseVec {
    let mut idx: Vec<usize> = tokens
        .iter()
        .map(|t| (feature_hash(t, UNIGRAM_SALT) % dim as u64) as usize)
        .chain(
            tokens
                .windows(2)
                .map(|w| (feature_hash(&format!("{} {}", w[0], w[1]), BIGRAM_SALT) % dim as u64) as usize),
        )
        .collect();
    idx.sort_unstable();
    let mut out: SparseVec = Vec::with_capacity(idx.len());
    for i in idx {
        match out.last_mut() {
            Some((j, c)) if *j == i => *c += 1.0,
            _ => out.push((i, 1.0)),
        }
    }
    let norm = out.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|(_, c)| *c /= norm);
    }
    out
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub feature_dim: usize,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            seed: 0,
            epochs: 200,
            learning_rate: 1.0,
            l2_penalty: 1e-4,
            feature_dim: 4096,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("classifier epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("classifier learning rate must be positive"));
        }
        if self.feature_dim == 0 || self.l2_penalty < 0.0 {
            return Err(Error::invalid("feature_dim must be positive and l2_penalty non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// Row-major `num_classes x feature_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub train_seed: u64,
}

impl ClassifierParams {
    pub fn zeros(num_classes: usize, feature_dim: usize) -> Self {
        ClassifierParams {
            weights: vec![0.0; num_classes * feature_dim],
            bias: vec![0.0; num_classes],
            feature_dim,
            num_classes,
            train_seed: 0,
        }
    }

    fn logits(&self, x: &SparseVec) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| {
                let row = &self.weights[c * self.feature_dim..(c + 1) * self.feature_dim];
                self.bias[c] + x.iter().map(|&(i, v)| row[i] * v).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_features(&self, x: &SparseVec) -> Vec<f64> {
        let mut z = self.logits(x);
        softmax_in_place(&mut z);
        z
    }

    /// Class probabilities for a sentence.
    pub fn predict_proba(&self, s: &Sentence) -> Vec<f64> {
        self.predict_features(&hashed_features(&s.tokens, self.feature_dim))
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, s: &Sentence) -> usize {
        argmax(&self.predict_proba(s))
    }

    fn check_class(&self, y: usize) -> Result<()> {
        if y < self.num_classes {
            Ok(())
        } else {
            Err(Error::InvalidClass {
                class: y,
                num_classes: self.num_classes,
            })
        }
    }

    /// `p(y | s)`.
    pub fn likelihood(&self, s: &Sentence, y: usize) -> Result<f64> {
        self.check_class(y)?;
        Ok(self.predict_proba(s)[y])
    }

    /// `1 - p(y | s)`.
    pub fn confusion(&self, s: &Sentence, y: usize) -> Result<f64> {
        Ok(1.0 - self.likelihood(s, y)?)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Classifier interface consumed by the reward and adversarial modules.
pub trait Victim: Send + Sync {
    fn num_classes(&self) -> usize;
    fn predict_proba(&self, s: &Sentence) -> Vec<f64>;

    fn likelihood(&self, s: &Sentence, y: usize) -> Result<f64> {
        if y >= self.num_classes() {
            return Err(Error::InvalidClass {
                class: y,
                num_classes: self.num_classes(),
            });
        }
        Ok(self.predict_proba(s)[y])
    }

    fn predict(&self, s: &Sentence) -> usize {
        argmax(&self.predict_proba(s))
    }
}

impl Victim for ClassifierParams {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_proba(&self, s: &Sentence) -> Vec<f64> {
        ClassifierParams::predict_proba(self, s)
    }
}

/// Mean cross-entropy plus `l2/2 * |W|^2`, and its gradient.
fn loss_and_grad(
    params: &ClassifierParams,
    feats: &[(SparseVec, usize)],
    l2: f64,
    exec: Execution,
) -> (f64, Vec<f64>, Vec<f64>) {
    let c = params.num_classes;
    let d = params.feature_dim;
    let partials = exec.map_chunks(feats, GRAD_CHUNK, |chunk| {
        let mut gw = vec![0.0; c * d];
        let mut gb = vec![0.0; c];
        let mut loss = 0.0;
        for (x, y) in chunk {
            let p = params.predict_features(x);
            loss -= p[*y].max(f64::MIN_POSITIVE).ln();
            for k in 0..c {
                let r = p[k] - if k == *y { 1.0 } else { 0.0 };
                gb[k] += r;
                let row = &mut gw[k * d..(k + 1) * d];
                for &(i, v) in x {
                    row[i] += r * v;
                }
            }
        }
        (loss, gw, gb)
    });
    let n = feats.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; c * d];
    let mut gb = vec![0.0; c];
    for (l, w, b) in partials {
        loss += l;
        add_assign(&mut gw, &w);
        add_assign(&mut gb, &b);
    }
    gw.iter_mut()
        .zip(&params.weights)
        .for_each(|(g, w)| *g = *g / n + l2 * w);
    gb.iter_mut().for_each(|g| *g /= n);
    let reg = 0.5 * l2 * params.weights.iter().map(|w| w * w).sum::<f64>();
    (loss / n + reg, gw, gb)
}

/// Trains the classifier and returns the per-epoch training loss (measured
/// before each update) alongside the parameters.
pub fn train_classifier_traced(
    data: &[LabeledExample],
    num_classes: usize,
    cfg: &ClassifierTrainConfig,
    exec: Execution,
) -> Result<(ClassifierParams, Vec<f64>)> {
    cfg.validate()?;
    if num_classes < 2 {
        return Err(Error::invalid("a classifier needs at least two classes"));
    }
    crate::textcore::validate_labels(data, num_classes)?;
    let present: BTreeSet<usize> = data.iter().map(|e| e.label).collect();
    let missing: Vec<usize> = (0..num_classes).filter(|c| !present.contains(c)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingClasses(missing));
    }

    let d = cfg.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ClassifierParams {
        weights: (0..num_classes * d).map(|_| rng.gen_range(-0.01..0.01)).collect(),
        bias: vec![0.0; num_classes],
        feature_dim: d,
        num_classes,
        train_seed: cfg.seed,
    };
    let feats: Vec<(SparseVec, usize)> = data
        .iter()
        .map(|e| (hashed_features(&e.sentence.tokens, d), e.label))
        .collect();

    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (loss, gw, gb) = loss_and_grad(&params, &feats, cfg.l2_penalty, exec);
        losses.push(loss);
        params
            .weights
            .iter_mut()
            .zip(&gw)
            .for_each(|(w, g)| *w -= cfg.learning_rate * g);
        params
            .bias
            .iter_mut()
            .zip(&gb)
            .for_each(|(b, g)| *b -= cfg.learning_rate * g);
    }
    Ok((params, losses))
}

pub fn train_classifier(
    data: &[LabeledExample],
    num_classes: usize,
    cfg: &ClassifierTrainConfig,
    exec: Execution,
) -> Result<ClassifierParams> {
    train_classifier_traced(data, num_classes, cfg, exec).map(|(p, _)| p)
}

/// Indices of examples whose argmax prediction differs from the label.
pub fn misclassified(params: &ClassifierParams, data: &[LabeledExample]) -> BTreeSet<usize> {
    data.iter()
        .enumerate()
        .filter(|(_, e)| params.predict(&e.sentence) != e.label)
        .map(|(i, _)| i)
        .collect()
}

pub fn accuracy(params: &ClassifierParams, data: &[LabeledExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset is undefined"));
    }
    Ok(1.0 - misclassified(params, data).len() as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorOverlap {
    /// Fraction of the test set misclassified by every classifier.
    pub and_frac: f64,
    /// Fraction misclassified by at least one classifier.
    pub or_frac: f64,
    /// Jaccard index of each pair of error sets (1 for two empty sets).
    pub pairwise_shared: Vec<Vec<f64>>,
}

pub fn error_overlap(sets: &[BTreeSet<usize>], test_size: usize) -> Result<ErrorOverlap> {
    if test_size == 0 {
        return Err(Error::invalid("error overlap needs a nonempty test set"));
    }
    let n = test_size as f64;
    let (inter, union) = match sets.split_first() {
        None => (BTreeSet::new(), BTreeSet::new()),
        Some((first, rest)) => rest.iter().fold((first.clone(), first.clone()), |(i, u), s| {
            (i.intersection(s).copied().collect(), u.union(s).copied().collect())
        }),
    };
    let pairwise_shared = sets
        .iter()
        .map(|a| {
            sets.iter()
                .map(|b| {
                    let u = a.union(b).count();
                    if u == 0 {
                        1.0
                    } else {
                        a.intersection(b).count() as f64 / u as f64
                    }
                })
                .collect()
        })
        .collect();
    Ok(ErrorOverlap {
        and_frac: inter.len() as f64 / n,
        or_frac: union.len() as f64 / n,
        pairwise_shared,
    })
}
