//! JSON-over-HTTP client for externally served scorers.
//!
//! | endpoint        | request                                  | response                                   |
//! |-----------------|------------------------------------------|--------------------------------------------|
//! | `POST /nli`     | `{"premise": str, "hypothesis": str}`    | `{"entail": f, "contradict": f, "neutral": f}` |
//! | `POST /embed`   | `{"text": str}`                          | `{"vector": [f, ...]}`                     |
//! | `POST /fluency` | `{"text": str}`                          | `{"perplexity": f}`                        |
//!
//! Failed requests are retried `retries` times before the error surfaces.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Embedder, EmbeddingVector, FluencyScorer, NliBackend, NliVerdict};
use crate::error::{Error, Result};
use crate::textcore::Sentence;

/// Environment variable consulted for the scorer base URL.
pub const SCORER_URL_ENV: &str = "TPRL_SCORER_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub retries: usize,
    pub max_in_flight: usize,
    /// Embedding dimension advertised by the server.
    pub embed_dim: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "http://127.0.0.1:8089".into(),
            timeout_ms: 10_000,
            retries: 2,
            max_in_flight: 8,
            embed_dim: super::DEFAULT_EMBED_DIM,
        }
    }
}

impl RemoteConfig {
    /// Default config with the base URL taken from `TPRL_SCORER_URL` when set.
    pub fn from_env() -> Self {
        let mut cfg = RemoteConfig::default();
        if let Ok(url) = std::env::var(SCORER_URL_ENV) {
            cfg.base_url = url;
        }
        cfg
    }
}

#[derive(Serialize)]
struct NliRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Serialize)]
struct TextRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct NliResponse {
    entail: f64,
    contradict: f64,
    neutral: f64,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

#[derive(Deserialize)]
struct FluencyResponse {
    perplexity: f64,
}

struct Gate {
    count: Mutex<usize>,
    cv: Condvar,
    cap: usize,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.count.lock().unwrap();
        while *n >= self.cap {
            n = self.cv.wait(n).unwrap();
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().unwrap() -= 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteScorer {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl RemoteScorer {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        let gate = Gate {
            count: Mutex::new(0),
            cv: Condvar::new(),
            cap: cfg.max_in_flight.max(1),
        };
        RemoteScorer { cfg, agent, gate }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, endpoint: &str, body: &B) -> Result<R> {
        let url = format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), endpoint);
        let attempts = self.cfg.retries + 1;
        let _slot = self.gate.acquire();
        let mut last = String::new();
        for _ in 0..attempts {
            let res = self
                .agent
                .post(&url)
                .send_json(body)
                .and_then(|mut r| r.body_mut().read_json::<R>());
            match res {
                Ok(v) => return Ok(v),
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::Remote {
            endpoint: endpoint.to_string(),
            attempts,
            message: last,
        })
    }
}

impl NliBackend for RemoteScorer {
    fn nli(&self, premise: &Sentence, hypothesis: &Sentence) -> Result<NliVerdict> {
        let r: NliResponse = self.post(
            "nli",
            &NliRequest {
                premise: &premise.text(),
                hypothesis: &hypothesis.text(),
            },
        )?;
        NliVerdict::checked(r.entail, r.contradict, r.neutral)
    }
}

impl Embedder for RemoteScorer {
    fn dim(&self) -> usize {
        self.cfg.embed_dim
    }

    fn embed(&self, s: &Sentence) -> Result<EmbeddingVector> {
        let r: EmbedResponse = self.post("embed", &TextRequest { text: &s.text() })?;
        if r.vector.len() != self.cfg.embed_dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.embed_dim,
                actual: r.vector.len(),
            });
        }
        if r.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Scorer("embedding contains non-finite values".into()));
        }
        Ok(EmbeddingVector(r.vector))
    }
}

impl FluencyScorer for RemoteScorer {
    fn perplexity(&self, s: &Sentence) -> Result<f64> {
        let r: FluencyResponse = self.post("fluency", &TextRequest { text: &s.text() })?;
        if !(r.perplexity.is_finite() && r.perplexity > 0.0) {
            return Err(Error::Scorer(format!("invalid perplexity {}", r.perplexity)));
        }
        Ok(r.perplexity)
    }
}
