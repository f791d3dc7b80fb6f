//! Adversarial sets, same-seed adversarial retraining, evaluation and the
//! cross-victim transfer matrix.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{paraphrase, GenConfig};
use crate::par::Execution;
use crate::policy::PolicyParams;
use crate::scorers::Scorers;
use crate::textcore::{read_jsonl, write_jsonl, LabeledExample, Sentence};
use crate::victim::{accuracy, train_classifier, ClassifierParams, ClassifierTrainConfig, Victim};

pub const DEFAULT_MI_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct AdvSample {
    pub original: LabeledExample,
    pub adversarial: Sentence,
    pub mi: f64,
    pub victim_confidence_true_label: f64,
}

impl AdvSample {
    /// The adversarial sentence under the original label.
    pub fn labeled(&self) -> LabeledExample {
        LabeledExample {
            sentence: self.adversarial.clone(),
            label: self.original.label,
        }
    }
}

/// On-disk form of an [`AdvSample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvRecord {
    pub original: String,
    pub adversarial: String,
    pub label: usize,
    pub mi: f64,
    pub victim_confidence_true_label: f64,
}

impl From<&AdvSample> for AdvRecord {
    fn from(s: &AdvSample) -> Self {
        AdvRecord {
            original: s.original.sentence.raw.clone(),
            adversarial: s.adversarial.raw.clone(),
            label: s.original.label,
            mi: s.mi,
            victim_confidence_true_label: s.victim_confidence_true_label,
        }
    }
}

impl From<&AdvRecord> for AdvSample {
    fn from(r: &AdvRecord) -> Self {
        AdvSample {
            original: LabeledExample::new(r.original.clone(), r.label),
            adversarial: Sentence::new(r.adversarial.clone()),
            mi: r.mi,
            victim_confidence_true_label: r.victim_confidence_true_label,
        }
    }
}

pub fn write_adversarial(samples: &[AdvSample], path: impl AsRef<Path>) -> Result<()> {
    let recs: Vec<AdvRecord> = samples.iter().map(AdvRecord::from).collect();
    write_jsonl(&recs, path)
}

pub fn read_adversarial(path: impl AsRef<Path>) -> Result<Vec<AdvSample>> {
    Ok(read_jsonl::<AdvRecord>(path)?.iter().map(AdvSample::from).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdvStats {
    pub generated: usize,
    pub retained: usize,
    pub failed: usize,
    /// Means over all generated samples.
    pub mean_mi: f64,
    pub mean_confusion: f64,
}

/// Scores `(original, paraphrase)` pairs and keeps those with MI at least
/// `mi_floor`, preserving input order.
pub fn filter_adversarial(
    candidates: &[(LabeledExample, Sentence)],
    victim: &dyn Victim,
    scorers: &Scorers,
    mi_floor: f64,
    exec: Execution,
) -> Result<(Vec<AdvSample>, AdvStats)> {
    if !(0.0..=1.0).contains(&mi_floor) {
        return Err(Error::invalid("mi_floor must lie in [0, 1]"));
    }
    let scored = exec.map(candidates, |(orig, adv)| -> Result<AdvSample> {
        let mi = scorers.mutual_implication(&orig.sentence, adv)?.mi;
        let conf = victim.likelihood(adv, orig.label)?;
        Ok(AdvSample {
            original: orig.clone(),
            adversarial: adv.clone(),
            mi,
            victim_confidence_true_label: conf,
        })
    });
    let mut stats = AdvStats::default();
    let mut kept = Vec::new();
    for s in scored {
        let s = s?;
        stats.generated += 1;
        stats.mean_mi += s.mi;
        stats.mean_confusion += 1.0 - s.victim_confidence_true_label;
        if s.mi >= mi_floor {
            kept.push(s);
        }
    }
    if stats.generated > 0 {
        stats.mean_mi /= stats.generated as f64;
        stats.mean_confusion /= stats.generated as f64;
    }
    stats.retained = kept.len();
    Ok((kept, stats))
}

fn paraphrase_all(
    policy: &PolicyParams,
    data: &[LabeledExample],
    gen: &GenConfig,
    scorers: &Scorers,
    exec: Execution,
) -> (Vec<(LabeledExample, Sentence)>, usize) {
    let out = exec.map(data, |e| {
        paraphrase(policy, &e.sentence, gen, scorers, Execution::Sequential).map(|c| c.sentence)
    });
    let mut pairs = Vec::with_capacity(data.len());
    let mut failed = 0;
    for (e, r) in data.iter().zip(out) {
        match r {
            Ok(s) => pairs.push((e.clone(), s)),
            Err(err) => {
                log::debug!("no paraphrase for {:?}: {err}", e.sentence.text());
                failed += 1;
            }
        }
    }
    (pairs, failed)
}

/// One paraphrase per training example, kept iff its MI reaches `mi_floor`.
pub fn build_adversarial_set(
    policy: &PolicyParams,
    trainset: &[LabeledExample],
    victim: &dyn Victim,
    scorers: &Scorers,
    gen: &GenConfig,
    mi_floor: f64,
    exec: Execution,
) -> Result<(Vec<AdvSample>, AdvStats)> {
    let (pairs, failed) = paraphrase_all(policy, trainset, gen, scorers, exec);
    let (kept, mut stats) = filter_adversarial(&pairs, victim, scorers, mi_floor, exec)?;
    stats.failed = failed;
    Ok((kept, stats))
}

/// Paraphrases of the test set that pass the MI filter and change the
/// victim's prediction relative to the original sentence.
pub fn build_adversarial_test(
    policy: &PolicyParams,
    testset: &[LabeledExample],
    victim: &dyn Victim,
    scorers: &Scorers,
    gen: &GenConfig,
    mi_floor: f64,
    exec: Execution,
) -> Result<(Vec<LabeledExample>, AdvStats)> {
    let (samples, mut stats) = build_adversarial_set(policy, testset, victim, scorers, gen, mi_floor, exec)?;
    let flipped: Vec<LabeledExample> = samples
        .iter()
        .filter(|s| victim.predict(&s.adversarial) != victim.predict(&s.original.sentence))
        .map(AdvSample::labeled)
        .collect();
    stats.retained = flipped.len();
    Ok((flipped, stats))
}

/// Retrains from scratch on the original data followed by the adversarial
/// samples, with the unchanged config (and therefore seed).
pub fn adversarial_train(
    trainset: &[LabeledExample],
    adv: &[AdvSample],
    num_classes: usize,
    victim_cfg: &ClassifierTrainConfig,
    exec: Execution,
) -> Result<ClassifierParams> {
    let mut data = trainset.to_vec();
    data.extend(adv.iter().map(AdvSample::labeled));
    train_classifier(&data, num_classes, victim_cfg, exec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub acc_orig: f64,
    pub acc_adv: f64,
}

pub fn evaluate_pair(
    classifier: &ClassifierParams,
    original_test: &[LabeledExample],
    adversarial_test: &[LabeledExample],
) -> Result<EvalPair> {
    if original_test.is_empty() || adversarial_test.is_empty() {
        return Err(Error::invalid("evaluation needs nonempty original and adversarial test sets"));
    }
    Ok(EvalPair {
        acc_orig: accuracy(classifier, original_test)?,
        acc_adv: accuracy(classifier, adversarial_test)?,
    })
}

/// A policy and the name of the victim it was trained against.
#[derive(Debug, Clone)]
pub struct NamedPolicy {
    pub params: PolicyParams,
    pub target: String,
}

#[derive(Debug, Clone)]
pub struct NamedVictim {
    pub params: ClassifierParams,
    pub config: ClassifierTrainConfig,
}

#[derive(Debug, Clone)]
pub struct TransferData<'a> {
    pub train: &'a [LabeledExample],
    pub test: &'a [LabeledExample],
    pub num_classes: usize,
    pub gen: GenConfig,
    pub mi_floor: f64,
}

/// Accuracy matrix with a `None` baseline row for the untouched victims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub policies: Vec<String>,
    pub victims: Vec<String>,
    pub none: Vec<EvalPair>,
    /// `cells[p][v]`: victim `v` after adversarial training with policy `p`.
    pub cells: Vec<Vec<EvalPair>>,
    /// Size of each victim's adversarial test set.
    pub adv_test_sizes: Vec<usize>,
}

impl TransferMatrix {
    pub fn cell(&self, policy: &str, victim: &str) -> Option<EvalPair> {
        let p = self.policies.iter().position(|x| x == policy)?;
        let v = self.victims.iter().position(|x| x == victim)?;
        Some(self.cells[p][v])
    }

    /// One row per policy (`None` first), two columns per victim.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["policy".to_string()];
        for v in &self.victims {
            header.push(format!("{v}_acc_orig"));
            header.push(format!("{v}_acc_adv"));
        }
        out.write_record(&header)?;
        let rows = std::iter::once(("None", &self.none)).chain(self.policies.iter().map(String::as_str).zip(&self.cells));
        for (name, row) in rows {
            let mut rec = vec![name.to_string()];
            for e in row {
                rec.push(format!("{:.6}", e.acc_orig));
                rec.push(format!("{:.6}", e.acc_adv));
            }
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Builds every (policy, victim) cell from the same base seeds. A victim's
/// adversarial test set comes from the policies that target it, or from all
/// policies when none does.
pub fn transfer_experiment(
    policies: &BTreeMap<String, NamedPolicy>,
    victims: &BTreeMap<String, NamedVictim>,
    data: &TransferData<'_>,
    scorers: &Scorers,
    exec: Execution,
) -> Result<TransferMatrix> {
    if policies.is_empty() || victims.is_empty() {
        return Err(Error::invalid("transfer needs at least one policy and one victim"));
    }
    for (name, p) in policies {
        if !victims.contains_key(&p.target) {
            return Err(Error::invalid(format!(
                "policy {name} targets unknown victim {}",
                p.target
            )));
        }
    }
    let pnames: Vec<String> = policies.keys().cloned().collect();
    let vnames: Vec<String> = victims.keys().cloned().collect();

    let mut adv_tests = Vec::with_capacity(vnames.len());
    for v in &vnames {
        let victim = &victims[v].params;
        let targeting: Vec<&NamedPolicy> = policies.values().filter(|p| &p.target == v).collect();
        let sources = if targeting.is_empty() {
            policies.values().collect()
        } else {
            targeting
        };
        let mut set = Vec::new();
        for p in sources {
            let (s, _) = build_adversarial_test(&p.params, data.test, victim, scorers, &data.gen, data.mi_floor, exec)?;
            set.extend(s);
        }
        if set.is_empty() {
            return Err(Error::invalid(format!("no adversarial test examples for victim {v}")));
        }
        adv_tests.push(set);
    }

    let none = vnames
        .iter()
        .zip(&adv_tests)
        .map(|(v, t)| evaluate_pair(&victims[v].params, data.test, t))
        .collect::<Result<Vec<_>>>()?;

    let grid: Vec<(usize, usize)> = (0..pnames.len())
        .flat_map(|p| (0..vnames.len()).map(move |v| (p, v)))
        .collect();
    let results = exec.map(&grid, |&(p, v)| -> Result<EvalPair> {
        let victim = &victims[&vnames[v]];
        let policy = &policies[&pnames[p]].params;
        let (adv, _) = build_adversarial_set(
            policy,
            data.train,
            &victim.params,
            scorers,
            &data.gen,
            data.mi_floor,
            Execution::Sequential,
        )?;
        let retrained = adversarial_train(data.train, &adv, data.num_classes, &victim.config, Execution::Sequential)?;
        evaluate_pair(&retrained, data.test, &adv_tests[v])
    });
    let mut cells = vec![Vec::with_capacity(vnames.len()); pnames.len()];
    for ((p, _), r) in grid.iter().zip(results) {
        cells[*p].push(r?);
    }
    Ok(TransferMatrix {
        policies: pnames,
        victims: vnames,
        none,
        cells,
        adv_test_sizes: adv_tests.iter().map(Vec::len).collect(),
    })
}
