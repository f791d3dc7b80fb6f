//! Autoregressive paraphrase policy.
//!
//! The policy is a linear softmax over a bounded vocabulary applied to a
//! hashed state encoding, plus a linear value head on the same features:
//!
//! ```text
//! features = [ source bag (L2) | last-2 prefix tokens (L2) | t / |source| ]
//! pi(. | s) = softmax(W . features)        V(s) = v . features
//! ```
//!
//! Both heads have closed-form gradients, which the PPO update consumes.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{add_assign, Execution};
use crate::rl::lion::{Lion, LionConfig};
use crate::textcore::{feature_hash, ParaphrasePair, Sentence};
use crate::victim::{softmax_in_place, SparseVec};

pub const EOS: &str = "</s>";
/// Number of trailing prefix tokens visible to the policy.
pub const CONTEXT_TOKENS: usize = 2;
pub const MAX_VOCAB: usize = 512;
pub const DEFAULT_FEATURE_DIM: usize = 257;

const SOURCE_SALT: u64 = 0x9011_c700;
const PREFIX_SALT: u64 = 0x9011_c7a0;

/// Ordered token list with EOS at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub const EOS_ID: usize = 0;

    /// EOS followed by the `cap - 1` most frequent tokens (ties broken
    /// alphabetically).
    pub fn from_corpus<'a>(sentences: impl IntoIterator<Item = &'a Sentence>, cap: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in sentences {
            for t in &s.tokens {
                if t != EOS {
                    *counts.entry(t.as_str()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens: Vec<String> = std::iter::once(EOS.to_string())
            .chain(ranked.into_iter().take(cap.max(1) - 1).map(|(t, _)| t.to_string()))
            .collect();
        Vocab::from(tokens)
    }

    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut list = vec![EOS.to_string()];
        for t in tokens {
            let t = t.as_ref();
            if t == EOS || list.iter().any(|x| x == t) {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
            list.push(t.to_string());
        }
        Ok(Vocab::from(list))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Block layout of the state encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    pub dim: usize,
    pub source: Range<usize>,
    pub prefix: Range<usize>,
    pub position: usize,
}

impl FeatureLayout {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::invalid("policy feature dimension must be at least 3"));
        }
        let prefix_dim = (dim - 1) / 2;
        let source_dim = dim - 1 - prefix_dim;
        Ok(FeatureLayout {
            dim,
            source: 0..source_dim,
            prefix: source_dim..source_dim + prefix_dim,
            position: dim - 1,
        })
    }
}

/// Decoding state: the source sentence and the token ids emitted so far.
#[derive(Debug, Clone, Copy)]
pub struct PolicyState<'a> {
    pub source: &'a Sentence,
    pub prefix: &'a [usize],
}

impl PolicyState<'_> {
    pub fn position(&self) -> usize {
        self.prefix.len()
    }
}

fn l2_block(entries: &mut [(usize, f64)]) {
    let n = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        entries.iter_mut().for_each(|(_, v)| *v /= n);
    }
}

fn merge_sorted(mut idx: Vec<usize>) -> SparseVec {
    idx.sort_unstable();
    let mut out: SparseVec = Vec::with_capacity(idx.len());
    for i in idx {
        match out.last_mut() {
            Some((j, c)) if *j == i => *c += 1.0,
            _ => out.push((i, 1.0)),
        }
    }
    out
}

/// A probability vector over the vocabulary with the optional support mask
/// it was restricted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
    pub mask: Option<Vec<bool>>,
}

impl ActionDistribution {
    pub fn unmasked(probs: Vec<f64>) -> Self {
        ActionDistribution { probs, mask: None }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Argmax with lowest-index tie-break.
    pub fn greedy(&self) -> usize {
        crate::victim::argmax(&self.probs)
    }

    /// Restricts to `mask` and renormalizes. Fails if the mask removes all
    /// probability mass.
    pub fn restrict(&self, mask: &[bool]) -> Result<ActionDistribution> {
        if mask.len() != self.probs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.probs.len(),
                actual: mask.len(),
            });
        }
        let total: f64 = self.probs.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| p).sum();
        if !(total > 0.0) {
            return Err(Error::Generation("mask leaves no probability mass".into()));
        }
        let probs = self
            .probs
            .iter()
            .zip(mask)
            .map(|(&p, &m)| if m { p / total } else { 0.0 })
            .collect();
        Ok(ActionDistribution {
            probs,
            mask: Some(mask.to_vec()),
        })
    }
}

/// Gradient buffer with the shape of the policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub logit: Vec<f64>,
    pub value: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        ParamGrad {
            logit: vec![0.0; vocab_size * dim],
            value: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, other: &ParamGrad) {
        add_assign(&mut self.logit, &other.logit);
        add_assign(&mut self.value, &other.value);
    }

    pub fn scale(&mut self, c: f64) {
        self.logit.iter_mut().chain(self.value.iter_mut()).for_each(|g| *g *= c);
    }

    pub fn norm(&self) -> f64 {
        self.logit
            .iter()
            .chain(&self.value)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub vocab: Vocab,
    pub feature_dim: usize,
    /// Row-major `vocab.len() x feature_dim`.
    pub logit_weights: Vec<f64>,
    pub value_weights: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(vocab: Vocab, feature_dim: usize) -> Result<Self> {
        FeatureLayout::new(feature_dim)?;
        let v = vocab.len();
        Ok(PolicyParams {
            vocab,
            feature_dim,
            logit_weights: vec![0.0; v * feature_dim],
            value_weights: vec![0.0; feature_dim],
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.feature_dim).expect("validated at construction")
    }

    pub fn validate(&self) -> Result<()> {
        FeatureLayout::new(self.feature_dim)?;
        let expected = self.vocab.len() * self.feature_dim;
        if self.logit_weights.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.logit_weights.len(),
            });
        }
        if self.value_weights.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: self.value_weights.len(),
            });
        }
        if self.vocab.id(EOS) != Some(Vocab::EOS_ID) {
            return Err(Error::invalid("vocabulary must start with EOS"));
        }
        if self.logit_weights.iter().chain(&self.value_weights).any(|w| !w.is_finite()) {
            return Err(Error::invalid("policy parameters must be finite"));
        }
        Ok(())
    }

    /// Sparse state features.
    pub fn encode_state(&self, state: PolicyState<'_>) -> SparseVec {
        let layout = self.layout();
        let src_dim = layout.source.len() as u64;
        let mut src = merge_sorted(
            state
                .source
                .tokens
                .iter()
                .map(|t| layout.source.start + (feature_hash(t, SOURCE_SALT) % src_dim) as usize)
                .collect(),
        );
        l2_block(&mut src);

        let pre_dim = layout.prefix.len() as u64;
        let mut pre = merge_sorted(
            state
                .prefix
                .iter()
                .rev()
                .take(CONTEXT_TOKENS)
                .enumerate()
                .map(|(k, &id)| {
                    let h = feature_hash(self.vocab.token(id), PREFIX_SALT + k as u64);
                    layout.prefix.start + (h % pre_dim) as usize
                })
                .collect(),
        );
        l2_block(&mut pre);

        let n = state.source.len();
        let pos = if n == 0 {
            0.0
        } else {
            state.position() as f64 / n as f64
        };
        let mut out = src;
        out.extend(pre);
        if pos != 0.0 {
            out.push((layout.position, pos));
        }
        out
    }

    /// Dense form of [`encode_state`](Self::encode_state).
    pub fn encode_state_dense(&self, state: PolicyState<'_>) -> Vec<f64> {
        let mut v = vec![0.0; self.feature_dim];
        for (i, x) in self.encode_state(state) {
            v[i] = x;
        }
        v
    }

    pub fn logits(&self, x: &SparseVec) -> Vec<f64> {
        let d = self.feature_dim;
        (0..self.vocab_size())
            .map(|j| {
                let row = &self.logit_weights[j * d..(j + 1) * d];
                x.iter().map(|&(i, v)| row[i] * v).sum()
            })
            .collect()
    }

    pub fn dist_from_features(&self, x: &SparseVec) -> ActionDistribution {
        let mut z = self.logits(x);
        softmax_in_place(&mut z);
        ActionDistribution::unmasked(z)
    }

    pub fn action_dist(&self, state: PolicyState<'_>) -> ActionDistribution {
        self.dist_from_features(&self.encode_state(state))
    }

    pub fn value_from_features(&self, x: &SparseVec) -> f64 {
        x.iter().map(|&(i, v)| self.value_weights[i] * v).sum()
    }

    pub fn value(&self, state: PolicyState<'_>) -> f64 {
        self.value_from_features(&self.encode_state(state))
    }

    /// Log-probability of `action` under the (optionally masked) policy and
    /// the per-row coefficients of its gradient: `d logpi / dW[j, :] =
    /// coeff[j] * features`, with `coeff[j] = 1{j = a} - pi_j` inside the
    /// mask and 0 outside.
    pub fn logprob_coeffs(&self, x: &SparseVec, action: usize, mask: Option<&[bool]>) -> Result<(f64, Vec<f64>)> {
        if action >= self.vocab_size() {
            return Err(Error::UnknownToken(format!("#{action}")));
        }
        let full = self.dist_from_features(x);
        let dist = match mask {
            Some(m) => full.restrict(m)?,
            None => full,
        };
        let pa = dist.probs[action];
        if pa <= 0.0 {
            return Err(Error::Generation(format!("action {action} lies outside the mask")));
        }
        let coeffs = dist
            .probs
            .iter()
            .enumerate()
            .map(|(j, &p)| if j == action { 1.0 - p } else { -p })
            .collect();
        Ok((pa.ln(), coeffs))
    }

    /// Adds `scale * d logpi(a|s) / dW` into `grad`.
    pub(crate) fn accumulate_logprob_grad(grad: &mut ParamGrad, d: usize, x: &SparseVec, coeffs: &[f64], scale: f64) {
        for (j, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = &mut grad.logit[j * d..(j + 1) * d];
            for &(i, v) in x {
                row[i] += scale * c * v;
            }
        }
    }

    /// `(log pi(a | s), d log pi(a | s) / d theta)`; the value-head block of
    /// the gradient is zero.
    pub fn logprob_grad(&self, state: PolicyState<'_>, action: &str) -> Result<(f64, ParamGrad)> {
        let a = self
            .vocab
            .id(action)
            .ok_or_else(|| Error::UnknownToken(action.to_string()))?;
        let x = self.encode_state(state);
        let (lp, coeffs) = self.logprob_coeffs(&x, a, None)?;
        let mut g = ParamGrad::zeros(self.vocab_size(), self.feature_dim);
        Self::accumulate_logprob_grad(&mut g, self.feature_dim, &x, &coeffs, 1.0);
        Ok((lp, g))
    }

    /// `d V(s) / d theta`: the features in the value block, zero elsewhere.
    pub fn value_grad(&self, state: PolicyState<'_>) -> ParamGrad {
        let mut g = ParamGrad::zeros(self.vocab_size(), self.feature_dim);
        for (i, v) in self.encode_state(state) {
            g.value[i] = v;
        }
        g
    }

    /// Applies `theta - step` style updates produced by an optimizer over the
    /// flattened `[logit_weights, value_weights]` vector.
    pub fn flat_params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.logit_weights, &mut self.value_weights)
    }
}

/// Mask that allows every token except EOS.
pub fn no_eos_mask(vocab_size: usize) -> Vec<bool> {
    (0..vocab_size).map(|j| j != Vocab::EOS_ID).collect()
}

// ---------------------------------------------------------------------------
// supervised fit of the initial paraphraser

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParaphraserFitConfig {
    pub feature_dim: usize,
    pub vocab_cap: usize,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for ParaphraserFitConfig {
    fn default() -> Self {
        ParaphraserFitConfig {
            feature_dim: DEFAULT_FEATURE_DIM,
            vocab_cap: MAX_VOCAB,
            steps: 300,
            learning_rate: 0.05,
        }
    }
}

struct FitStep {
    x: SparseVec,
    action: usize,
}

/// Teacher-forced maximum-likelihood fit of the policy to paraphrase pairs
/// (full batch, Lion with linearly decaying rate). Returns the fitted
/// parameters and the mean negative log-likelihood before each step.
///
/// `extra_vocab` contributes tokens (e.g. the task corpus) without
/// contributing training targets.
pub fn fit_paraphraser(
    pairs: &[ParaphrasePair],
    extra_vocab: &[Sentence],
    cfg: &ParaphraserFitConfig,
    exec: Execution,
) -> Result<(PolicyParams, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("cannot fit a paraphraser without pairs"));
    }
    let vocab = Vocab::from_corpus(
        pairs
            .iter()
            .flat_map(|p| [&p.source, &p.target])
            .chain(extra_vocab.iter()),
        cfg.vocab_cap,
    );
    let mut params = PolicyParams::zeros(vocab, cfg.feature_dim)?;
    let mask = no_eos_mask(params.vocab_size());

    let mut steps = Vec::new();
    for p in pairs {
        let ids: Vec<usize> = p.target.tokens.iter().filter_map(|t| params.vocab.id(t)).collect();
        for t in 0..ids.len() {
            let state = PolicyState {
                source: &p.source,
                prefix: &ids[..t],
            };
            steps.push(FitStep {
                x: params.encode_state(state),
                action: ids[t],
            });
        }
    }
    if steps.is_empty() {
        return Err(Error::invalid("paraphrase targets contain no in-vocabulary tokens"));
    }

    let (v, d) = (params.vocab_size(), params.feature_dim);
    let mut opt = Lion::new(
        LionConfig {
            learning_rate: cfg.learning_rate,
            ..LionConfig::default()
        },
        v * d + d,
    );
    let n = steps.len() as f64;
    let mut history = Vec::with_capacity(cfg.steps);
    for k in 0..cfg.steps {
        let partials = exec.map_chunks(&steps, 256, |chunk| {
            let mut g = ParamGrad::zeros(v, d);
            let mut nll = 0.0;
            for s in chunk {
                let (lp, coeffs) = params
                    .logprob_coeffs(&s.x, s.action, Some(&mask))
                    .expect("targets are in vocabulary and unmasked");
                nll -= lp;
                // descend on the negative log-likelihood
                PolicyParams::accumulate_logprob_grad(&mut g, d, &s.x, &coeffs, -1.0);
            }
            (nll, g)
        });
        let mut grad = ParamGrad::zeros(v, d);
        let mut nll = 0.0;
        for (l, g) in partials {
            nll += l;
            grad.add(&g);
        }
        grad.scale(1.0 / n);
        history.push(nll / n);
        opt.config.learning_rate = cfg.learning_rate * (1.0 - k as f64 / cfg.steps as f64);
        opt.step(&mut params, &grad);
    }
    Ok((params, history))
}
