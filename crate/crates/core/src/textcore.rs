//! Tokenization, n-grams, labeled and paired datasets, JSONL persistence and
//! seeded splits.

use std::collections::HashMap;
use std::fs::File;
use std::hash::Hasher;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentences longer than this are truncated at tokenization time.
pub const MAX_TOKENS: usize = 256;

/// A raw string together with its normalized token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    pub raw: String,
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = tokenize(&raw).tokens;
        Sentence { raw, tokens }
    }

    /// Builds a sentence from already-normalized tokens; `raw` is their
    /// space-joined form.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        Sentence {
            raw: tokens.join(" "),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub sentence: Sentence,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: usize) -> Self {
        LabeledExample {
            sentence: Sentence::new(text),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParaphrasePair {
    pub source: Sentence,
    pub target: Sentence,
    pub scores: Option<std::collections::BTreeMap<String, f64>>,
}

impl ParaphrasePair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        ParaphrasePair {
            source: Sentence::new(source),
            target: Sentence::new(target),
            scores: None,
        }
    }
}

/// Checks that every label is below `num_classes`.
pub fn validate_labels(examples: &[LabeledExample], num_classes: usize) -> Result<()> {
    match examples.iter().find(|e| e.label >= num_classes) {
        Some(e) => Err(Error::InvalidClass {
            class: e.label,
            num_classes,
        }),
        None => Ok(()),
    }
}

/// Number of classes implied by the largest label (at least 2).
pub fn infer_num_classes(examples: &[LabeledExample]) -> usize {
    examples
        .iter()
        .map(|e| e.label + 1)
        .max()
        .unwrap_or(0)
        .max(2)
}

fn is_excluded(token: &str) -> bool {
    token.starts_with('@')
        || token.starts_with('#')
        || token.starts_with("http://")
        || token.starts_with("https://")
        || token.starts_with("www.")
}

/// Lowercases, splits on whitespace, drops mentions, hashtags and URLs, strips
/// leading/trailing ASCII punctuation other than `@` and `#`, and removes
/// interior apostrophes.
pub fn tokenize(raw: &str) -> Sentence {
    let mut tokens = Vec::new();
    for piece in raw.split_whitespace() {
        let lower = piece.to_lowercase();
        if is_excluded(&lower) {
            continue;
        }
        let stripped: String = lower
            .trim_matches(|c: char| c.is_ascii_punctuation() && c != '@' && c != '#')
            .chars()
            .filter(|&c| c != '\'')
            .collect();
        // a token that only becomes a mention/URL after stripping is dropped
        // too, which keeps tokenization idempotent
        if stripped.is_empty() || is_excluded(&stripped) {
            continue;
        }
        tokens.push(stripped);
        if tokens.len() == MAX_TOKENS {
            break;
        }
    }
    Sentence {
        raw: raw.to_string(),
        tokens,
    }
}

/// Multiset of contiguous `n`-token windows.
pub fn ngrams(s: &Sentence, n: usize) -> Result<HashMap<&[String], usize>> {
    if n == 0 {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    let mut counts = HashMap::new();
    for w in s.tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Stable 64-bit hash used for all feature hashing.
pub fn feature_hash(text: &str, salt: u64) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(salt);
    h.write(text.as_bytes());
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

/// Default (train, validation, test) ratios.
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Seeded shuffle then partition. Validation and test take
/// `ceil(n * ratio)` items, training takes the remainder, which reproduces
/// the 76,857 / 9,608 / 9,608 partition of 96,073 items.
pub fn split_dataset<T: Clone>(
    items: &[T],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit<T>> {
    let (tr, va, te) = ratios;
    if !(tr > 0.0 && va > 0.0 && te > 0.0) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let take = |r: f64| ((n as f64 * r) - 1e-9).ceil().max(0.0) as usize;
    let n_val = take(va).min(n);
    let n_test = take(te).min(n - n_val);
    let n_train = n - n_val - n_test;

    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
        seed,
    })
}

// ---------------------------------------------------------------------------
// JSONL records

/// On-disk form of a labeled example. Unknown fields survive a round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub text: String,
    pub label: usize,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// On-disk form of a paraphrase pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<std::collections::BTreeMap<String, f64>>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// A bare sentence record with an optional label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl From<&LabeledExample> for LabeledRecord {
    fn from(e: &LabeledExample) -> Self {
        LabeledRecord {
            text: e.sentence.raw.clone(),
            label: e.label,
            extra: Default::default(),
        }
    }
}

impl From<&LabeledRecord> for LabeledExample {
    fn from(r: &LabeledRecord) -> Self {
        LabeledExample::new(r.text.clone(), r.label)
    }
}

impl From<&ParaphrasePair> for PairRecord {
    fn from(p: &ParaphrasePair) -> Self {
        PairRecord {
            source: p.source.raw.clone(),
            target: p.target.raw.clone(),
            scores: p.scores.clone(),
            extra: Default::default(),
        }
    }
}

impl From<&PairRecord> for ParaphrasePair {
    fn from(r: &PairRecord) -> Self {
        ParaphrasePair {
            source: Sentence::new(r.source.clone()),
            target: Sentence::new(r.target.clone()),
            scores: r.scores.clone(),
        }
    }
}

/// Reads one JSON object per line. Blank lines are skipped; a malformed
/// line fails with its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Jsonl {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    Ok(read_jsonl::<LabeledRecord>(path)?
        .iter()
        .map(LabeledExample::from)
        .collect())
}

pub fn write_labeled(examples: &[LabeledExample], path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<LabeledRecord> = examples.iter().map(LabeledRecord::from).collect();
    write_jsonl(&records, path)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<ParaphrasePair>> {
    Ok(read_jsonl::<PairRecord>(path)?
        .iter()
        .map(ParaphrasePair::from)
        .collect())
}

pub fn write_pairs(pairs: &[ParaphrasePair], path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<PairRecord> = pairs.iter().map(PairRecord::from).collect();
    write_jsonl(&records, path)
}
