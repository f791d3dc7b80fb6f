use serde::{Deserialize, Serialize};

use super::Embedder;
use crate::error::Result;
use crate::textcore::{feature_hash, Sentence};

pub const DEFAULT_EMBED_DIM: usize = 256;

const UNIGRAM_SALT: u64 = 0x5eed_0001;
const BIGRAM_SALT: u64 = 0x5eed_0002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

/// Cosine similarity, defined as 0 when either vector is all-zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Signed feature hashing of unigrams (and optionally bigrams) followed by
/// L2 normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedEmbedder {
    pub dim: usize,
    pub bigrams: bool,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder {
            dim: DEFAULT_EMBED_DIM,
            bigrams: true,
        }
    }
}

impl HashedEmbedder {
    pub fn new(dim: usize, bigrams: bool) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashedEmbedder { dim, bigrams }
    }

    /// Bucket and sign a feature string is hashed to.
    pub fn bucket(&self, feature: &str, bigram: bool) -> (usize, f64) {
        let salt = if bigram { BIGRAM_SALT } else { UNIGRAM_SALT };
        let h = feature_hash(feature, salt);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        ((h % self.dim as u64) as usize, sign)
    }

    pub fn embed_tokens(&self, tokens: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for t in tokens {
            let (i, s) = self.bucket(t, false);
            v[i] += s;
        }
        if self.bigrams {
            for w in tokens.windows(2) {
                let (i, s) = self.bucket(&format!("{} {}", w[0], w[1]), true);
                v[i] += s;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Embedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, s: &Sentence) -> Result<EmbeddingVector> {
        Ok(EmbeddingVector(self.embed_tokens(&s.tokens)))
    }
}
