use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::FluencyScorer;
use crate::error::{Error, Result};
use crate::textcore::Sentence;

/// Add-k constant of the reference language model.
pub const ADD_K: f64 = 0.1;
/// Temperature of the perplexity-to-fluency squashing.
pub const FLUENCY_TEMPERATURE: f64 = 200.0;

const PAD: &str = "<s>";
const UNK: &str = "<unk>";
const SEP: char = '\u{1f}';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum LmState {
    Untrained,
    Uniform {
        vocab_size: usize,
    },
    Trained {
        vocab: BTreeSet<String>,
        trigrams: BTreeMap<String, u64>,
        contexts: BTreeMap<String, u64>,
    },
}

/// Add-k smoothed trigram model with two start pads. Tokens outside the
/// training vocabulary map to a single unknown type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigramLm {
    k: f64,
    state: LmState,
}

impl TrigramLm {
    /// A model that refuses to score until trained.
    pub fn untrained() -> Self {
        TrigramLm {
            k: ADD_K,
            state: LmState::Untrained,
        }
    }

    /// Uniform distribution over `vocab_size` types.
    pub fn uniform(vocab_size: usize) -> Self {
        assert!(vocab_size > 0);
        TrigramLm {
            k: ADD_K,
            state: LmState::Uniform { vocab_size },
        }
    }

    pub fn train(corpus: &[Sentence]) -> Self {
        let mut vocab = BTreeSet::new();
        let mut trigrams = BTreeMap::new();
        let mut contexts = BTreeMap::new();
        for s in corpus {
            let mut u = PAD;
            let mut v = PAD;
            for w in &s.tokens {
                vocab.insert(w.clone());
                *trigrams.entry(format!("{u}{SEP}{v}{SEP}{w}")).or_insert(0) += 1;
                *contexts.entry(format!("{u}{SEP}{v}")).or_insert(0) += 1;
                u = v;
                v = w;
            }
        }
        TrigramLm {
            k: ADD_K,
            state: LmState::Trained {
                vocab,
                trigrams,
                contexts,
            },
        }
    }

    /// Number of predictable types, including the unknown type.
    pub fn vocab_size(&self) -> Option<usize> {
        match &self.state {
            LmState::Untrained => None,
            LmState::Uniform { vocab_size } => Some(*vocab_size),
            LmState::Trained { vocab, .. } => Some(vocab.len() + 1),
        }
    }

    /// Per-token natural-log probabilities.
    pub fn token_logprobs(&self, s: &Sentence) -> Result<Vec<f64>> {
        match &self.state {
            LmState::Untrained => Err(Error::Scorer("language model has not been trained".into())),
            LmState::Uniform { vocab_size } => {
                Ok(vec![-(*vocab_size as f64).ln(); s.tokens.len()])
            }
            LmState::Trained {
                vocab,
                trigrams,
                contexts,
            } => {
                let v_size = (vocab.len() + 1) as f64;
                let norm = |w: &str| -> String {
                    if vocab.contains(w) {
                        w.to_string()
                    } else {
                        UNK.to_string()
                    }
                };
                let mut u = PAD.to_string();
                let mut v = PAD.to_string();
                let mut out = Vec::with_capacity(s.tokens.len());
                for w in &s.tokens {
                    let w = norm(w);
                    let c3 = trigrams.get(&format!("{u}{SEP}{v}{SEP}{w}")).copied().unwrap_or(0);
                    let c2 = contexts.get(&format!("{u}{SEP}{v}")).copied().unwrap_or(0);
                    let p = (c3 as f64 + self.k) / (c2 as f64 + self.k * v_size);
                    out.push(p.ln());
                    u = v;
                    v = w;
                }
                Ok(out)
            }
        }
    }
}

impl FluencyScorer for TrigramLm {
    fn perplexity(&self, s: &Sentence) -> Result<f64> {
        let lps = self.token_logprobs(s)?;
        if lps.is_empty() {
            return Err(Error::Scorer("cannot score an empty sentence".into()));
        }
        let mean = lps.iter().sum::<f64>() / lps.len() as f64;
        Ok((-mean).exp())
    }
}
