//! Targeted paraphrasing with reinforcement learning.
//!
//! The crate filters paraphrase corpora, trains an autoregressive paraphrase
//! policy with PPO and top-p action masking against a pluggable victim
//! classifier, builds MI-filtered adversarial training sets, retrains the
//! victim and measures robustness and cross-victim transfer.
//!
//! Data-parallel loops (pair scoring, candidate decoding, rollout
//! collection, gradient accumulation, transfer cells) go through
//! [`par::Execution`]; the `parallel` feature (on by default) backs it with
//! rayon, and every reduction runs in a fixed order so results do not
//! depend on the thread count.

pub mod adversarial;
pub mod checkpoint;
pub mod corpus_filter;
pub mod error;
pub mod generator;
pub mod par;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod rl;
pub mod scorers;
pub mod synthetic;
pub mod textcore;
pub mod victim;

pub use error::{Error, Result};
pub use par::Execution;
