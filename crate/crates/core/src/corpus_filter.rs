//! Four-stage paraphrase-pair filter: lexical overlap, word reordering,
//! semantic similarity and trigram overlap.
//!
//! A pair is removed by the first failing filter in that fixed order. All
//! comparisons are strict: removal happens when an overlap score is strictly
//! above its maximum, when Kendall's tau is strictly above `1 - reorder_min`,
//! or when similarity is strictly below its minimum.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::scorers::{cosine, Embedder};
use crate::textcore::{ngrams, ParaphrasePair, Sentence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub unigram_overlap_max: f64,
    pub reorder_min: f64,
    pub semantic_sim_min: f64,
    pub trigram_overlap_max: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            unigram_overlap_max: 0.5,
            reorder_min: 0.5,
            semantic_sim_min: 0.5,
            trigram_overlap_max: 0.7,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.unigram_overlap_max,
            self.reorder_min,
            self.semantic_sim_min,
            self.trigram_overlap_max,
        ];
        if all.iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(())
        } else {
            Err(Error::invalid(format!("filter thresholds must lie in [0, 1]: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterStage {
    Unigram,
    Reorder,
    Semantic,
    Trigram,
}

impl FilterStage {
    pub const ORDER: [FilterStage; 4] = [
        FilterStage::Unigram,
        FilterStage::Reorder,
        FilterStage::Semantic,
        FilterStage::Trigram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterStage::Unigram => "unigram",
            FilterStage::Reorder => "reorder",
            FilterStage::Semantic => "semantic",
            FilterStage::Trigram => "trigram",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub comparison: String,
    pub config: FilterConfig,
    pub input_count: usize,
    pub removed_by_filter: BTreeMap<String, usize>,
    pub retained_count: usize,
}

/// Scores of one pair under all four filters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScores {
    pub unigram_f1: f64,
    pub kendall_tau: Option<f64>,
    pub semantic_similarity: f64,
    pub trigram_overlap: f64,
}

impl PairScores {
    /// First filter this pair fails, if any.
    pub fn first_failure(&self, cfg: &FilterConfig) -> Option<FilterStage> {
        if self.unigram_f1 > cfg.unigram_overlap_max {
            Some(FilterStage::Unigram)
        } else if self.kendall_tau.is_some_and(|t| t > 1.0 - cfg.reorder_min) {
            Some(FilterStage::Reorder)
        } else if self.semantic_similarity < cfg.semantic_sim_min {
            Some(FilterStage::Semantic)
        } else if self.trigram_overlap > cfg.trigram_overlap_max {
            Some(FilterStage::Trigram)
        } else {
            None
        }
    }

    fn to_map(self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("unigram_f1".to_string(), self.unigram_f1);
        if let Some(t) = self.kendall_tau {
            m.insert("kendall_tau".to_string(), t);
        }
        m.insert("semantic_similarity".to_string(), self.semantic_similarity);
        m.insert("trigram_overlap".to_string(), self.trigram_overlap);
        m
    }
}

fn multiset_f1(a: &HashMap<&[String], usize>, b: &HashMap<&[String], usize>) -> f64 {
    let len_a: usize = a.values().sum();
    let len_b: usize = b.values().sum();
    if len_a == 0 || len_b == 0 {
        return 0.0;
    }
    let common: usize = a
        .iter()
        .map(|(k, &ca)| b.get(k).map_or(0, |&cb| ca.min(cb)))
        .sum();
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / len_a as f64;
    let r = common as f64 / len_b as f64;
    2.0 * p * r / (p + r)
}

/// Token-level multiset F1 between two sentences.
pub fn unigram_f1(a: &Sentence, b: &Sentence) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("unigram F1 is undefined for an empty sentence"));
    }
    Ok(multiset_f1(&ngrams(a, 1)?, &ngrams(b, 1)?))
}

/// Multiset F1 over trigrams; 0 when either side has fewer than 3 tokens.
pub fn trigram_overlap(a: &Sentence, b: &Sentence) -> f64 {
    if a.len() < 3 || b.len() < 3 {
        return 0.0;
    }
    multiset_f1(&ngrams(a, 3).unwrap(), &ngrams(b, 3).unwrap())
}

fn singleton_positions(s: &Sentence) -> HashMap<&str, Option<usize>> {
    let mut m: HashMap<&str, Option<usize>> = HashMap::new();
    for (i, t) in s.tokens.iter().enumerate() {
        m.entry(t.as_str())
            .and_modify(|p| *p = None)
            .or_insert(Some(i));
    }
    m
}

/// Counts inversions with a merge sort, returning the sorted sequence.
fn count_inversions(seq: &mut [usize], buf: &mut Vec<usize>) -> u64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = count_inversions(&mut seq[..mid], buf) + count_inversions(&mut seq[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if seq[i] <= seq[j] {
            buf.push(seq[i]);
            i += 1;
        } else {
            inv += (mid - i) as u64;
            buf.push(seq[j]);
            j += 1;
        }
    }
    buf.extend_from_slice(&seq[i..mid]);
    buf.extend_from_slice(&seq[j..n]);
    seq.copy_from_slice(buf);
    inv
}

/// Kendall's tau-a over the words that occur exactly once in each sentence.
/// `None` when fewer than two such words are shared.
pub fn kendall_tau_shared(a: &Sentence, b: &Sentence) -> Option<f64> {
    let pa = singleton_positions(a);
    let pb = singleton_positions(b);
    let mut shared: Vec<(usize, usize)> = pa
        .iter()
        .filter_map(|(w, &ia)| Some((ia?, pb.get(w).copied().flatten()?)))
        .collect();
    let k = shared.len();
    if k < 2 {
        return None;
    }
    shared.sort_unstable();
    let mut seq: Vec<usize> = shared.into_iter().map(|(_, ib)| ib).collect();
    let discordant = count_inversions(&mut seq, &mut Vec::with_capacity(k));
    let total = (k * (k - 1) / 2) as u64;
    let concordant = total - discordant;
    Some((concordant as f64 - discordant as f64) / total as f64)
}

/// Cosine similarity of the two sentence embeddings.
pub fn semantic_similarity(a: &Sentence, b: &Sentence, embedder: &dyn Embedder) -> Result<f64> {
    let ea = embedder.embed(a)?;
    let eb = embedder.embed(b)?;
    if ea.dim() != eb.dim() {
        return Err(Error::DimensionMismatch {
            expected: ea.dim(),
            actual: eb.dim(),
        });
    }
    Ok(cosine(&ea.0, &eb.0))
}

pub fn score_pair(pair: &ParaphrasePair, embedder: &dyn Embedder) -> Result<PairScores> {
    Ok(PairScores {
        unigram_f1: unigram_f1(&pair.source, &pair.target)?,
        kendall_tau: kendall_tau_shared(&pair.source, &pair.target),
        semantic_similarity: semantic_similarity(&pair.source, &pair.target, embedder)?,
        trigram_overlap: trigram_overlap(&pair.source, &pair.target),
    })
}

/// Runs the four filters over `pairs`. Retained pairs carry their scores.
pub fn filter_corpus(
    pairs: &[ParaphrasePair],
    cfg: &FilterConfig,
    embedder: &dyn Embedder,
    exec: Execution,
) -> Result<(Vec<ParaphrasePair>, FilterReport)> {
    cfg.validate()?;
    if let Some(i) = pairs.iter().position(|p| p.source.is_empty() || p.target.is_empty()) {
        return Err(Error::invalid(format!("pair {i} has an empty sentence after tokenization")));
    }
    let scored = exec.map(pairs, |p| score_pair(p, embedder));

    let mut removed: BTreeMap<String, usize> = FilterStage::ORDER
        .iter()
        .map(|s| (s.name().to_string(), 0))
        .collect();
    let mut retained = Vec::new();
    for (pair, scores) in pairs.iter().zip(scored) {
        let scores = scores?;
        match scores.first_failure(cfg) {
            Some(stage) => *removed.get_mut(stage.name()).unwrap() += 1,
            None => {
                let mut kept = pair.clone();
                kept.scores = Some(scores.to_map());
                retained.push(kept);
            }
        }
    }
    let report = FilterReport {
        comparison: "remove if unigram_f1 > unigram_overlap_max, else kendall_tau > 1 - reorder_min, \
                     else semantic_similarity < semantic_sim_min, else trigram_overlap > trigram_overlap_max"
            .to_string(),
        config: *cfg,
        input_count: pairs.len(),
        retained_count: retained.len(),
        removed_by_filter: removed,
    };
    Ok((retained, report))
}
