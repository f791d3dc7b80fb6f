//! Pluggable embedding, entailment and fluency scorers.
//!
//! Each capability is a trait so that neural models can be served remotely
//! (see [`remote`]) while tests and desk-scale runs use the deterministic
//! local references: [`HashedEmbedder`], [`LexicalNliProxy`] and
//! [`TrigramLm`].

mod embed;
mod fluency;
mod nli;
pub mod remote;

use std::sync::Arc;

pub use embed::{cosine, EmbeddingVector, HashedEmbedder, DEFAULT_EMBED_DIM};
pub use fluency::{TrigramLm, ADD_K, FLUENCY_TEMPERATURE};
pub use nli::{mutual_implication, LexicalNliProxy, MiScore, NliVerdict};
pub use remote::{RemoteConfig, RemoteScorer};

use crate::error::Result;
use crate::textcore::Sentence;

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, s: &Sentence) -> Result<EmbeddingVector>;
}

pub trait NliBackend: Send + Sync {
    fn nli(&self, premise: &Sentence, hypothesis: &Sentence) -> Result<NliVerdict>;
}

pub trait FluencyScorer: Send + Sync {
    fn perplexity(&self, s: &Sentence) -> Result<f64>;

    /// Squashes perplexity into (0, 1]; higher is more fluent.
    fn fluency(&self, s: &Sentence) -> Result<f64> {
        Ok(fluency_from_perplexity(self.perplexity(s)?))
    }
}

pub fn fluency_from_perplexity(ppl: f64) -> f64 {
    (-ppl / FLUENCY_TEMPERATURE).exp()
}

/// The three scorer roles used throughout the pipeline.
#[derive(Clone)]
pub struct Scorers {
    pub embedder: Arc<dyn Embedder>,
    pub nli: Arc<dyn NliBackend>,
    pub fluency: Arc<dyn FluencyScorer>,
}

impl Scorers {
    /// Local reference scorers with the language model fit on `lm_corpus`.
    pub fn reference(lm_corpus: &[Sentence]) -> Self {
        Scorers {
            embedder: Arc::new(HashedEmbedder::default()),
            nli: Arc::new(LexicalNliProxy::default()),
            fluency: Arc::new(TrigramLm::train(lm_corpus)),
        }
    }

    pub fn remote(cfg: RemoteConfig) -> Self {
        let r = Arc::new(RemoteScorer::new(cfg));
        Scorers {
            embedder: r.clone(),
            nli: r.clone(),
            fluency: r,
        }
    }

    pub fn mutual_implication(&self, a: &Sentence, b: &Sentence) -> Result<MiScore> {
        mutual_implication(self.nli.as_ref(), a, b)
    }
}

impl std::fmt::Debug for Scorers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scorers").finish_non_exhaustive()
    }
}
