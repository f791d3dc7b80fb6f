use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::NliBackend;
use crate::error::{Error, Result};
use crate::textcore::Sentence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliVerdict {
    pub entail: f64,
    pub contradict: f64,
    pub neutral: f64,
}

impl NliVerdict {
    /// Validates a probability triple as returned by a backend.
    pub fn checked(entail: f64, contradict: f64, neutral: f64) -> Result<Self> {
        let v = NliVerdict {
            entail,
            contradict,
            neutral,
        };
        let ok = [entail, contradict, neutral]
            .iter()
            .all(|p| p.is_finite() && (0.0..=1.0).contains(p))
            && (entail + contradict + neutral - 1.0).abs() <= 1e-6;
        if ok {
            Ok(v)
        } else {
            Err(Error::Scorer(format!("invalid NLI verdict {v:?}")))
        }
    }
}

/// Bidirectional entailment summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiScore {
    pub forward: f64,
    pub backward: f64,
    pub mi: f64,
}

/// Mean of the entailment probabilities in both directions.
pub fn mutual_implication(backend: &dyn NliBackend, a: &Sentence, b: &Sentence) -> Result<MiScore> {
    let forward = backend.nli(a, b)?.entail;
    let backward = backend.nli(b, a)?.entail;
    Ok(MiScore {
        forward,
        backward,
        mi: (forward + backward) / 2.0,
    })
}

/// Entailment estimated as smoothed coverage of the hypothesis's content
/// words (tokens of at least `min_content_len` characters) by the premise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalNliProxy {
    pub smoothing: f64,
    pub min_content_len: usize,
}

impl Default for LexicalNliProxy {
    fn default() -> Self {
        LexicalNliProxy {
            smoothing: 1.0,
            min_content_len: 3,
        }
    }
}

impl LexicalNliProxy {
    fn content_words<'a>(&self, s: &'a Sentence) -> HashSet<&'a str> {
        s.tokens
            .iter()
            .filter(|t| t.chars().count() >= self.min_content_len)
            .map(String::as_str)
            .collect()
    }
}

impl NliBackend for LexicalNliProxy {
    fn nli(&self, premise: &Sentence, hypothesis: &Sentence) -> Result<NliVerdict> {
        let premise_words: HashSet<&str> = premise.tokens.iter().map(String::as_str).collect();
        let hyp = self.content_words(hypothesis);
        let covered = hyp.iter().filter(|w| premise_words.contains(*w)).count();
        let k = self.smoothing;
        let entail = (covered as f64 + k) / (hyp.len() as f64 + k);
        Ok(NliVerdict {
            entail,
            contradict: 0.0,
            neutral: 1.0 - entail,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(words: &[&str]) -> Sentence {
        Sentence::from_tokens(words)
    }

    struct Fixed(f64, f64);

    impl NliBackend for Fixed {
        fn nli(&self, premise: &Sentence, _h: &Sentence) -> Result<NliVerdict> {
            let e = if premise.tokens[0] == "a" { self.0 } else { self.1 };
            NliVerdict::checked(e, 0.0, 1.0 - e)
        }
    }

    #[test]
    fn full_coverage_entails() {
        let p = LexicalNliProxy::default();
        let x = s(&["the", "movie", "was", "fun"]);
        assert_eq!(p.nli(&x, &x).unwrap().entail, 1.0);
    }

    #[test]
    fn no_content_words_is_smoothing_limit() {
        let p = LexicalNliProxy::default();
        let v = p.nli(&s(&["xyz"]), &s(&["a", "to", "of"])).unwrap();
        assert_eq!(v.entail, 1.0);
    }

    #[test]
    fn partial_coverage() {
        let p = LexicalNliProxy::default();
        let premise = s(&["alpha", "beta", "zz"]);
        let hyp = s(&["alpha", "beta", "gamma", "delta", "of"]);
        let v = p.nli(&premise, &hyp).unwrap();
        assert!((v.entail - 3.0 / 5.0).abs() < 1e-15);
        assert!((v.entail + v.contradict + v.neutral - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mi_is_mean_and_symmetric() {
        let a = s(&["a", "x"]);
        let b = s(&["b", "y"]);
        let m = mutual_implication(&Fixed(0.6, 1.0), &a, &b).unwrap();
        assert_eq!((m.forward, m.backward), (0.6, 1.0));
        assert!((m.mi - 0.8).abs() < 1e-15);

        let p = LexicalNliProxy::default();
        let x = s(&["the", "quick", "brown", "fox"]);
        let y = s(&["a", "quick", "red", "fox", "jumps"]);
        let xy = mutual_implication(&p, &x, &y).unwrap();
        let yx = mutual_implication(&p, &y, &x).unwrap();
        assert_eq!(xy.mi, yx.mi);
        assert_eq!(mutual_implication(&p, &x, &x).unwrap().mi, 1.0);
    }

    #[test]
    fn checked_rejects_bad_triples() {
        assert!(NliVerdict::checked(0.5, 0.5, 0.5).is_err());
        assert!(NliVerdict::checked(f64::NAN, 0.0, 1.0).is_err());
        assert!(NliVerdict::checked(0.2, 0.3, 0.5).is_ok());
    }
}
