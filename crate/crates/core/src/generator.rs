//! Length-matched candidate decoding and fluency/adequacy ranking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{derive_seed, Execution};
use crate::policy::{no_eos_mask, ActionDistribution, PolicyParams, PolicyState};
use crate::rl::nlpo::nlpo_mask;
use crate::scorers::Scorers;
use crate::textcore::{feature_hash, Sentence, MAX_TOKENS};
use crate::victim::SparseVec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub num_candidates: usize,
    pub length_match: bool,
    pub top_p: f64,
    pub rank_fluency_weight: f64,
    pub rank_adequacy_weight: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_candidates: 10,
            length_match: true,
            top_p: 0.95,
            rank_fluency_weight: 0.5,
            rank_adequacy_weight: 0.5,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_candidates == 0 {
            return Err(Error::Config("generator.num_candidates must be at least 1".into()));
        }
        if !self.length_match {
            return Err(Error::Config("generator.length_match cannot be disabled".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config("generator.top_p must lie in (0, 1]".into()));
        }
        let (f, a) = (self.rank_fluency_weight, self.rank_adequacy_weight);
        if !(f >= 0.0 && a >= 0.0) || f + a == 0.0 {
            return Err(Error::Config(
                "generator ranking weights must be non-negative and not both zero".into(),
            ));
        }
        Ok(())
    }
}

/// One decoding step of a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub features: SparseVec,
    /// The sampling distribution after masking.
    pub dist: ActionDistribution,
    pub action: usize,
    pub logprob: f64,
}

impl StepRecord {
    pub fn mask(&self) -> &[bool] {
        self.dist.mask.as_deref().expect("decoding always masks")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub draw: usize,
    pub sentence: Sentence,
    pub actions: Vec<usize>,
    pub steps: Vec<StepRecord>,
    pub fluency: f64,
    pub adequacy: f64,
    pub rank_score: f64,
}

/// Serializable summary of a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub source: String,
    pub rank: usize,
    pub draw: usize,
    pub text: String,
    pub fluency: f64,
    pub adequacy: f64,
    pub rank_score: f64,
}

fn draw_seed(seed: u64, source: &Sentence, draw: usize) -> u64 {
    derive_seed(seed, &[feature_hash(&source.tokens.join(" "), 0), draw as u64])
}

fn sample(dist: &ActionDistribution, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = 0;
    for (j, &p) in dist.probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = j;
            if u < cum {
                return j;
            }
        }
    }
    last
}

/// Samples one candidate of exactly `|source|` tokens. At every step the
/// support is the top-p set of `masker` (EOS excluded) and the sampling
/// distribution is `policy` renormalized on that support; EOS is implicit
/// after the last token.
pub fn decode_one(
    policy: &PolicyParams,
    masker: &PolicyParams,
    source: &Sentence,
    cfg: &GenConfig,
    draw: usize,
) -> Result<Candidate> {
    if source.is_empty() {
        return Err(Error::Generation("cannot paraphrase an empty sentence".into()));
    }
    if source.len() > MAX_TOKENS {
        return Err(Error::Generation(format!(
            "source has {} tokens, more than {MAX_TOKENS}",
            source.len()
        )));
    }
    if masker.vocab_size() != policy.vocab_size() {
        return Err(Error::DimensionMismatch {
            expected: policy.vocab_size(),
            actual: masker.vocab_size(),
        });
    }
    let no_eos = no_eos_mask(policy.vocab_size());
    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(cfg.seed, source, draw));
    let mut actions = Vec::with_capacity(source.len());
    let mut steps = Vec::with_capacity(source.len());
    for _ in 0..source.len() {
        let x = policy.encode_state(PolicyState {
            source,
            prefix: &actions,
        });
        let support = nlpo_mask(&masker.dist_from_features(&x).restrict(&no_eos)?, cfg.top_p);
        let mask = support.mask.expect("nlpo_mask records its support");
        let dist = policy
            .dist_from_features(&x)
            .restrict(&mask)
            .map_err(|_| Error::Generation("vocabulary empty after masking".into()))?;
        let a = sample(&dist, &mut rng);
        let logprob = dist.probs[a].ln();
        actions.push(a);
        steps.push(StepRecord {
            features: x,
            dist,
            action: a,
            logprob,
        });
    }
    let sentence = Sentence::from_tokens(
        &actions.iter().map(|&a| policy.vocab.token(a)).collect::<Vec<_>>(),
    );
    Ok(Candidate {
        draw,
        sentence,
        actions,
        steps,
        fluency: 0.0,
        adequacy: 0.0,
        rank_score: 0.0,
    })
}

fn score(mut c: Candidate, source: &Sentence, cfg: &GenConfig, scorers: &Scorers) -> Result<Candidate> {
    c.fluency = scorers.fluency.fluency(&c.sentence)?;
    c.adequacy = scorers.mutual_implication(source, &c.sentence)?.mi;
    c.rank_score = cfg.rank_fluency_weight * c.fluency + cfg.rank_adequacy_weight * c.adequacy;
    Ok(c)
}

/// Sorts by rank score, descending, ties by draw index.
pub fn rank(candidates: &mut [Candidate]) {
    candidates.sort_by(|a, b| b.rank_score.total_cmp(&a.rank_score).then(a.draw.cmp(&b.draw)));
}

/// Draws `num_candidates` candidates and returns the valid ones ranked.
pub fn generate_candidates(
    policy: &PolicyParams,
    masker: &PolicyParams,
    source: &Sentence,
    cfg: &GenConfig,
    scorers: &Scorers,
    exec: Execution,
) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    let drawn = exec.map_range(cfg.num_candidates, |i| {
        decode_one(policy, masker, source, cfg, i).and_then(|c| score(c, source, cfg, scorers))
    });
    let mut valid = Vec::with_capacity(drawn.len());
    let mut last_err = None;
    for c in drawn {
        match c {
            Ok(c) => valid.push(c),
            Err(e) => last_err = Some(e),
        }
    }
    if valid.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::Generation("no candidates".into())));
    }
    rank(&mut valid);
    Ok(valid)
}

/// The rank-1 candidate, using the policy as its own masker.
pub fn paraphrase(
    policy: &PolicyParams,
    source: &Sentence,
    cfg: &GenConfig,
    scorers: &Scorers,
    exec: Execution,
) -> Result<Candidate> {
    generate_candidates(policy, policy, source, cfg, scorers, exec).map(|mut v| v.swap_remove(0))
}
