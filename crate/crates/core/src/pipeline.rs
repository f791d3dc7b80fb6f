//! Configuration, the end-to-end driver, metrics reports, vector export and
//! run manifests.
//!
//! A run reads one TOML file:
//!
//! ```toml
//! seed = 0                  # optional; overrides every seed below
//! execution = "parallel"    # or "sequential"
//!
//! [data]
//! train = "train.jsonl"     # {"text", "label"} records
//! test = "test.jsonl"
//! pairs = "pairs.jsonl"     # {"source", "target"} records
//!
//! [filter]       # corpus filter thresholds
//! [victim]       # classifier training
//! [paraphraser]  # supervised fit of the reference policy
//! [rl]           # [rl.loop], [rl.ppo], [rl.nlpo], [rl.lion], [rl.reward], [rl.generator]
//! [adversarial]  # mi_floor and [adversarial.generator]
//! [scorers]      # optional; backend = "reference" | "remote"
//! ```
//!
//! Every block except `scorers` must be present, though it may be empty to
//! take the defaults. Relative data paths resolve against the config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::adversarial::{
    adversarial_train, build_adversarial_set, build_adversarial_test, evaluate_pair, write_adversarial, AdvStats,
    DEFAULT_MI_FLOOR,
};
use crate::checkpoint::{self, sha256_file};
use crate::corpus_filter::{filter_corpus, FilterConfig};
use crate::error::{Error, Result};
use crate::generator::GenConfig;
use crate::par::Execution;
use crate::policy::{fit_paraphraser, ParaphraserFitConfig};
use crate::rl::{train, RlConfig};
use crate::scorers::{cosine, RemoteConfig, Scorers};
use crate::synthetic::{self, KeywordTaskConfig};
use crate::textcore::{
    infer_num_classes, read_labeled, read_pairs, write_labeled, write_pairs, LabeledExample, ParaphrasePair, Sentence,
};
use crate::victim::{train_classifier, ClassifierParams, ClassifierTrainConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REQUIRED_BLOCKS: [&str; 6] = ["data", "filter", "victim", "paraphraser", "rl", "adversarial"];

pub const POLICY_KIND: &str = "policy";
pub const CLASSIFIER_KIND: &str = "classifier";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    pub pairs: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversarialConfig {
    pub mi_floor: f64,
    pub generator: GenConfig,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            mi_floor: DEFAULT_MI_FLOOR,
            generator: GenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScorerBackend {
    #[default]
    Reference,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ScorerConfig {
    pub backend: ScorerBackend,
    /// Used with the remote backend; the base URL falls back to
    /// `TPRL_SCORER_URL` when left empty.
    pub remote: Option<RemoteConfig>,
}

impl ScorerConfig {
    /// Builds scorers; the reference language model is fit on `lm_corpus`.
    pub fn build(&self, lm_corpus: &[Sentence]) -> Scorers {
        match self.backend {
            ScorerBackend::Reference => Scorers::reference(lm_corpus),
            ScorerBackend::Remote => {
                let mut cfg = self.remote.clone().unwrap_or_else(RemoteConfig::from_env);
                if cfg.base_url.is_empty() {
                    cfg.base_url = RemoteConfig::from_env().base_url;
                }
                Scorers::remote(cfg)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub execution: Execution,
    pub data: DataConfig,
    pub filter: FilterConfig,
    pub victim: ClassifierTrainConfig,
    pub paraphraser: ParaphraserFitConfig,
    pub rl: RlConfig,
    pub adversarial: AdversarialConfig,
    #[serde(default)]
    pub scorers: ScorerConfig,
}

impl PipelineConfig {
    /// Parses TOML, reporting the first missing required block by name.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for block in REQUIRED_BLOCKS {
            match table.get(block) {
                None => return Err(Error::Config(format!("missing required config block [{block}]"))),
                Some(v) if !v.is_table() => return Err(Error::Config(format!("config block [{block}] must be a table"))),
                Some(_) => {}
            }
        }
        let mut cfg: PipelineConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(seed) = cfg.seed {
            cfg.apply_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file and resolves relative data paths against it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.data.train, &mut cfg.data.test, &mut cfg.data.pairs] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets every seed in the configuration.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.victim.seed = seed;
        self.rl.train.seed = seed;
        self.rl.generator.seed = seed;
        self.adversarial.generator.seed = seed;
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("victim".to_string(), self.victim.seed),
            ("rl.loop".to_string(), self.rl.train.seed),
            ("rl.generator".to_string(), self.rl.generator.seed),
            ("adversarial.generator".to_string(), self.adversarial.generator.seed),
        ])
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.victim.validate()?;
        self.rl.validate()?;
        self.adversarial.generator.validate()?;
        if !(0.0..=1.0).contains(&self.adversarial.mi_floor) {
            return Err(Error::Config("adversarial.mi_floor must lie in [0, 1]".into()));
        }
        if self.paraphraser.steps == 0 {
            return Err(Error::Config("paraphraser.steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<Dataset> {
        let d = &self.data;
        let train = read_labeled(&d.train)?;
        let test = read_labeled(&d.test)?;
        let pairs = read_pairs(&d.pairs)?;
        let num_classes = d.num_classes.unwrap_or_else(|| infer_num_classes(&train));
        Ok(Dataset {
            train,
            test,
            pairs,
            num_classes,
        })
    }

    /// The configuration of the synthetic keyword task with data files in
    /// the config's own directory.
    pub fn synthetic() -> Self {
        PipelineConfig {
            seed: None,
            execution: Execution::Parallel,
            data: DataConfig {
                train: "train.jsonl".into(),
                test: "test.jsonl".into(),
                pairs: "pairs.jsonl".into(),
                num_classes: Some(2),
            },
            filter: synthetic::filter_config(),
            victim: synthetic::victim_config(),
            paraphraser: synthetic::paraphraser_config(),
            rl: RlConfig::desk(),
            adversarial: AdversarialConfig::default(),
            scorers: ScorerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub pairs: Vec<ParaphrasePair>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn scorers(&self, cfg: &ScorerConfig) -> Scorers {
        cfg.build(&lm_corpus(&self.train, &self.pairs))
    }
}

/// A seconds-scale variant of the synthetic task for smoke runs: fewer
/// examples and pairs, short fits and two RL epochs.
pub fn smoke_workspace() -> (KeywordTaskConfig, PipelineConfig) {
    let task = KeywordTaskConfig {
        train_size: 60,
        test_size: 40,
        pair_count: 300,
        ..KeywordTaskConfig::default()
    };
    let mut cfg = PipelineConfig::synthetic();
    cfg.victim.epochs = 300;
    cfg.paraphraser.steps = 150;
    cfg.paraphraser.feature_dim = 257;
    cfg.rl.train.epochs = 2;
    cfg.rl.train.batch_size = 16;
    cfg.rl.generator.num_candidates = 4;
    cfg.adversarial.generator.num_candidates = 4;
    (task, cfg)
}

/// Writes the synthetic task's data and `cfg` as `config.toml` into `dir`,
/// returning the config path. `cfg.data` should name the files relative to
/// `dir`, as [`PipelineConfig::synthetic`] does.
pub fn write_synthetic_workspace(
    dir: impl AsRef<Path>,
    task_cfg: &KeywordTaskConfig,
    cfg: &PipelineConfig,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let task = synthetic::keyword_task(task_cfg)?;
    write_labeled(&task.train, dir.join("train.jsonl"))?;
    write_labeled(&task.test, dir.join("test.jsonl"))?;
    write_pairs(&task.pairs, dir.join("pairs.jsonl"))?;
    let path = dir.join("config.toml");
    let text = cfg.to_toml_string()?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Sentences the reference language model is fit on: training inputs and
/// paraphrase targets.
pub fn lm_corpus(train: &[LabeledExample], pairs: &[ParaphrasePair]) -> Vec<Sentence> {
    train
        .iter()
        .map(|e| e.sentence.clone())
        .chain(pairs.iter().map(|p| p.target.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc_orig_before: f64,
    pub acc_orig_after: f64,
    pub acc_adv_before: f64,
    pub acc_adv_after: f64,
    pub mean_ppl: f64,
    pub mean_fluency: f64,
    pub mean_sim: f64,
    pub mean_mi: f64,
    pub pairs: usize,
    pub scored: usize,
    pub failed: usize,
}

struct PairMetrics {
    ppl: f64,
    fluency: f64,
    sim: f64,
    mi: f64,
}

fn pair_metrics(orig: &Sentence, adv: &Sentence, scorers: &Scorers) -> Result<PairMetrics> {
    let ppl = scorers.fluency.perplexity(adv)?;
    let fluency = scorers.fluency.fluency(adv)?;
    let a = scorers.embedder.embed(orig)?;
    let b = scorers.embedder.embed(adv)?;
    Ok(PairMetrics {
        ppl,
        fluency,
        sim: cosine(&a.0, &b.0),
        mi: scorers.mutual_implication(orig, adv)?.mi,
    })
}

/// Means of PPL, fluency, SIM and MI over `(original, adversarial)` pairs,
/// plus accuracies before and after adversarial training. Pairs whose
/// scoring fails are left out and counted.
pub fn metrics_report(
    pairs: &[(Sentence, Sentence)],
    scorers: &Scorers,
    before: &ClassifierParams,
    after: &ClassifierParams,
    original_test: &[LabeledExample],
    adversarial_test: &[LabeledExample],
    exec: Execution,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("metrics need at least one pair"));
    }
    let b = evaluate_pair(before, original_test, adversarial_test)?;
    let a = evaluate_pair(after, original_test, adversarial_test)?;
    let scored = exec.map(pairs, |(o, x)| pair_metrics(o, x, scorers));
    let (mut ppl, mut fl, mut sim, mut mi, mut n, mut failed) = (0.0, 0.0, 0.0, 0.0, 0usize, 0usize);
    for m in scored {
        match m {
            Ok(m) => {
                ppl += m.ppl;
                fl += m.fluency;
                sim += m.sim;
                mi += m.mi;
                n += 1;
            }
            Err(e) => {
                log::warn!("pair excluded from metrics: {e}");
                failed += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Scorer("every pair failed to score".into()));
    }
    let k = n as f64;
    Ok(MetricsReport {
        acc_orig_before: b.acc_orig,
        acc_orig_after: a.acc_orig,
        acc_adv_before: b.acc_adv,
        acc_adv_after: a.acc_adv,
        mean_ppl: ppl / k,
        mean_fluency: fl / k,
        mean_sim: sim / k,
        mean_mi: mi / k,
        pairs: pairs.len(),
        scored: n,
        failed,
    })
}

impl MetricsReport {
    const HEADER: [&'static str; 11] = [
        "acc_orig_before",
        "acc_orig_after",
        "acc_adv_before",
        "acc_adv_after",
        "ppl",
        "fluency",
        "sim",
        "mi",
        "pairs",
        "scored",
        "failed",
    ];

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::HEADER)?;
        let f = |x: f64| format!("{x:.6}");
        out.write_record([
            f(self.acc_orig_before),
            f(self.acc_orig_after),
            f(self.acc_adv_before),
            f(self.acc_adv_after),
            f(self.mean_ppl),
            f(self.mean_fluency),
            f(self.mean_sim),
            f(self.mean_mi),
            self.pairs.to_string(),
            self.scored.to_string(),
            self.failed.to_string(),
        ])?;
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Accuracy block (percent) followed by the generation-quality block.
    pub fn text_table(&self, victim_name: &str) -> String {
        let pct = |x: f64| format!("{:.2}", 100.0 * x);
        let w = victim_name.len().max(10);
        let mut s = String::new();
        let _ = writeln!(s, "{:w$}  {:>17}  {:>17}", "", "original test", "adversarial test");
        let _ = writeln!(s, "{:w$}  {:>8} {:>8}  {:>8} {:>8}", "classifier", "before", "after", "before", "after");
        let _ = writeln!(
            s,
            "{:w$}  {:>8} {:>8}  {:>8} {:>8}",
            victim_name,
            pct(self.acc_orig_before),
            pct(self.acc_orig_after),
            pct(self.acc_adv_before),
            pct(self.acc_adv_after)
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>10} {:>8} {:>8} {:>8} {:>8}", "", "PPL", "FL", "SIM", "MI");
        let _ = writeln!(
            s,
            "{:>10} {:>8.2} {:>8.4} {:>8.4} {:>8.4}",
            "policy", self.mean_ppl, self.mean_fluency, self.mean_sim, self.mean_mi
        );
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Adversarial,
}

impl Origin {
    pub fn tag(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Adversarial => "adversarial",
        }
    }
}

/// Writes `id, origin, label, v0..v{d-1}` rows with 9 significant digits.
/// Returns the number of rows.
pub fn export_vectors(
    rows: &[(Origin, LabeledExample)],
    embedder: &dyn crate::scorers::Embedder,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let path = path.as_ref();
    let d = embedder.dim();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = csv::Writer::from_writer(std::io::BufWriter::new(f));
    let mut header = vec!["id".to_string(), "origin".to_string(), "label".to_string()];
    header.extend((0..d).map(|i| format!("v{i}")));
    out.write_record(&header)?;
    for (id, (origin, e)) in rows.iter().enumerate() {
        let v = embedder.embed(&e.sentence)?;
        if v.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: v.dim(),
            });
        }
        let mut rec = vec![id.to_string(), origin.tag().to_string(), e.label.to_string()];
        rec.extend(v.0.iter().map(|x| format!("{x:.8e}")));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileEntry {
    fn of(path: &Path) -> Result<Self> {
        Ok(FileEntry {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, FileEntry>,
    /// Every file the run wrote, keyed by artifact name.
    pub artifacts: BTreeMap<String, FileEntry>,
    /// Payload hashes of the checkpoints.
    pub checkpoints: BTreeMap<String, String>,
    pub results: Vec<PathBuf>,
    pub started_at: u64,
    pub finished_at: u64,
    /// `ok`, or the failing stage's error.
    pub status: String,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

struct Run<'a> {
    out: &'a Path,
    manifest: RunManifest,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn record(&mut self, key: &str, file: &str) -> Result<()> {
        let entry = FileEntry::of(&self.path(file))?;
        self.manifest.artifacts.insert(key.to_string(), entry);
        Ok(())
    }

    fn checkpoint<T: Serialize>(&mut self, key: &str, file: &str, kind: &str, value: &T) -> Result<()> {
        let hash = checkpoint::save(value, kind, self.path(file))?;
        self.manifest.checkpoints.insert(key.to_string(), hash);
        self.record(key, file)
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Everything the evaluate stage produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub metrics: MetricsReport,
    pub attack_stats: AdvStats,
}

/// filter → victim → reference fit → RL → attack → adversarial retraining →
/// evaluation. Artifacts land in `out_dir`; `manifest.json` is written on
/// success and failure alike.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: impl AsRef<Path>) -> Result<RunOutput> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut run = Run {
        out,
        manifest: RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            config: cfg.clone(),
            seeds: cfg.seeds(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            checkpoints: BTreeMap::new(),
            results: Vec::new(),
            started_at: now(),
            finished_at: 0,
            status: String::new(),
        },
    };
    let result = run_stages(cfg, &mut run);
    run.manifest.finished_at = now();
    run.manifest.status = match &result {
        Ok(_) => "ok".to_string(),
        Err(e) => e.to_string(),
    };
    let mpath = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&run.manifest)?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    let (metrics, attack_stats) = result?;
    Ok(RunOutput {
        manifest: run.manifest,
        metrics,
        attack_stats,
    })
}

fn run_stages(cfg: &PipelineConfig, run: &mut Run<'_>) -> Result<(MetricsReport, AdvStats)> {
    cfg.validate()?;
    let exec = cfg.execution;

    let data = stage("load", (|| {
        let d = &cfg.data;
        for (k, p) in [("train", &d.train), ("test", &d.test), ("pairs", &d.pairs)] {
            run.manifest.inputs.insert(k.to_string(), FileEntry::of(p)?);
        }
        cfg.load_data()
    })())?;
    let scorers = data.scorers(&cfg.scorers);
    let (train_set, test_set, pairs, num_classes) = (&data.train, &data.test, &data.pairs, data.num_classes);

    let filtered = stage("filter", (|| {
        let (kept, report) = filter_corpus(pairs, &cfg.filter, scorers.embedder.as_ref(), exec)?;
        write_pairs(&kept, run.path("filtered_pairs.jsonl"))?;
        run.record("filtered_pairs", "filtered_pairs.jsonl")?;
        fs::write(run.path("filter_report.json"), serde_json::to_string_pretty(&report)?)
            .map_err(|e| Error::io(run.path("filter_report.json"), e))?;
        run.record("filter_report", "filter_report.json")?;
        Ok(kept)
    })())?;

    let victim = stage("train-victim", (|| {
        let v = train_classifier(train_set, num_classes, &cfg.victim, exec)?;
        run.checkpoint("victim", "victim.json", CLASSIFIER_KIND, &v)?;
        Ok(v)
    })())?;

    let reference = stage("fit-paraphraser", (|| {
        let extra: Vec<Sentence> = train_set.iter().map(|e| e.sentence.clone()).collect();
        let (p, _) = fit_paraphraser(&filtered, &extra, &cfg.paraphraser, exec)?;
        run.checkpoint("reference_policy", "reference_policy.json", POLICY_KIND, &p)?;
        Ok(p)
    })())?;

    let policy = stage("train-policy", (|| {
        let outcome = match train(&reference, &victim, train_set, &scorers, &cfg.rl, exec) {
            Ok(o) => o,
            Err(Error::GeneratorCollapse { epoch, log }) => {
                log.write_epochs(run.path("training_log.jsonl"))?;
                run.record("training_log", "training_log.jsonl")?;
                return Err(Error::GeneratorCollapse { epoch, log });
            }
            Err(e) => return Err(e),
        };
        outcome.log.write_epochs(run.path("training_log.jsonl"))?;
        run.record("training_log", "training_log.jsonl")?;
        outcome.log.write_traces(run.path("reward_traces.jsonl"))?;
        run.record("reward_traces", "reward_traces.jsonl")?;
        run.checkpoint("policy", "policy.json", POLICY_KIND, &outcome.params)?;
        Ok(outcome.params)
    })())?;

    let gen = &cfg.adversarial.generator;
    let floor = cfg.adversarial.mi_floor;
    let (adv, adv_test, stats) = stage("attack", (|| {
        let (adv, stats) = build_adversarial_set(&policy, train_set, &victim, &scorers, gen, floor, exec)?;
        write_adversarial(&adv, run.path("adversarial_train.jsonl"))?;
        run.record("adversarial_train", "adversarial_train.jsonl")?;
        let (adv_test, _) = build_adversarial_test(&policy, test_set, &victim, &scorers, gen, floor, exec)?;
        write_labeled(&adv_test, run.path("adversarial_test.jsonl"))?;
        run.record("adversarial_test", "adversarial_test.jsonl")?;
        Ok((adv, adv_test, stats))
    })())?;

    let retrained = stage("adv-train", (|| {
        let v = adversarial_train(train_set, &adv, num_classes, &cfg.victim, exec)?;
        run.checkpoint("victim_at", "victim_at.json", CLASSIFIER_KIND, &v)?;
        Ok(v)
    })())?;

    let metrics = stage("evaluate", (|| {
        let pairs: Vec<(Sentence, Sentence)> = adv
            .iter()
            .map(|s| (s.original.sentence.clone(), s.adversarial.clone()))
            .collect();
        let m = metrics_report(&pairs, &scorers, &victim, &retrained, test_set, &adv_test, exec)?;
        let csv_path = run.path("results.csv");
        let f = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        m.write_csv(f)?;
        run.record("results_csv", "results.csv")?;
        fs::write(run.path("results.txt"), m.text_table("victim")).map_err(|e| Error::io(run.path("results.txt"), e))?;
        run.record("results_txt", "results.txt")?;
        run.manifest.results = vec![csv_path, run.path("results.txt")];
        Ok(m)
    })())?;
    Ok((metrics, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::{Embedder, HashedEmbedder};

    fn minimal_toml() -> String {
        "[data]\ntrain = \"a\"\ntest = \"b\"\npairs = \"c\"\n[filter]\n[victim]\n[paraphraser]\n[rl]\n[adversarial]\n".to_string()
    }

    #[test]
    fn empty_blocks_take_defaults() {
        let cfg = PipelineConfig::from_toml_str(&minimal_toml()).unwrap();
        assert_eq!(cfg.victim, ClassifierTrainConfig::default());
        assert_eq!(cfg.rl, RlConfig::default());
        assert_eq!(cfg.scorers.backend, ScorerBackend::Reference);
    }

    #[test]
    fn missing_block_is_named() {
        for block in REQUIRED_BLOCKS {
            let text: String = minimal_toml()
                .lines()
                .filter(|l| !l.starts_with(&format!("[{block}]")) && !(block == "data" && l.contains(" = ")))
                .map(|l| format!("{l}\n"))
                .collect();
            let err = PipelineConfig::from_toml_str(&text).unwrap_err().to_string();
            assert!(err.contains(&format!("[{block}]")), "{block}: {err}");
        }
    }

    #[test]
    fn seed_applies_everywhere() {
        let text = format!("seed = 9\n{}", minimal_toml());
        let cfg = PipelineConfig::from_toml_str(&text).unwrap();
        assert!(cfg.seeds().values().all(|&s| s == 9));
    }

    #[test]
    fn synthetic_config_round_trips() {
        let cfg = PipelineConfig::synthetic();
        let back = PipelineConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    fn tiny_victim() -> (ClassifierParams, Vec<LabeledExample>) {
        let data = vec![LabeledExample::new("good film", 1), LabeledExample::new("bad film", 0)];
        let v = train_classifier(&data, 2, &ClassifierTrainConfig::default(), Execution::Sequential).unwrap();
        (v, data)
    }

    #[test]
    fn identical_pairs_score_one() {
        let (v, data) = tiny_victim();
        let s = Scorers::reference(&[Sentence::new("good film")]);
        let pairs: Vec<_> = data.iter().map(|e| (e.sentence.clone(), e.sentence.clone())).collect();
        let m = metrics_report(&pairs, &s, &v, &v, &data, &data, Execution::Sequential).unwrap();
        assert!((m.mean_sim - 1.0).abs() < 1e-12);
        assert_eq!(m.mean_mi, 1.0);
        assert_eq!((m.pairs, m.scored, m.failed), (2, 2, 0));
    }

    #[test]
    fn single_pair_matches_scorer_calls() {
        let (v, data) = tiny_victim();
        let s = Scorers::reference(&[Sentence::new("good film"), Sentence::new("nice film")]);
        let (a, b) = (Sentence::new("good film"), Sentence::new("nice movie"));
        let m = metrics_report(&[(a.clone(), b.clone())], &s, &v, &v, &data, &data, Execution::Sequential).unwrap();
        assert_eq!(m.mean_ppl, s.fluency.perplexity(&b).unwrap());
        assert_eq!(m.mean_fluency, s.fluency.fluency(&b).unwrap());
        assert_eq!(m.mean_mi, s.mutual_implication(&a, &b).unwrap().mi);
        let sim = cosine(&s.embedder.embed(&a).unwrap().0, &s.embedder.embed(&b).unwrap().0);
        assert_eq!(m.mean_sim, sim);
    }

    #[test]
    fn five_pairs_match_hand_averages() {
        let (v, data) = tiny_victim();
        let s = Scorers::reference(&[Sentence::new("a good film"), Sentence::new("a bad plot twist")]);
        let pairs: Vec<(Sentence, Sentence)> = [
            ("a good film", "a nice film"),
            ("a bad plot", "a weak plot"),
            ("the cast", "the cast"),
            ("good acting overall", "great acting overall"),
            ("dull ending", "bland ending"),
        ]
        .iter()
        .map(|(a, b)| (Sentence::new(*a), Sentence::new(*b)))
        .collect();
        let m = metrics_report(&pairs, &s, &v, &v, &data, &data, Execution::Sequential).unwrap();
        let (mut ppl, mut fl, mut sim, mut mi) = (0.0, 0.0, 0.0, 0.0);
        for (a, b) in &pairs {
            ppl += s.fluency.perplexity(b).unwrap();
            fl += s.fluency.fluency(b).unwrap();
            sim += cosine(&s.embedder.embed(a).unwrap().0, &s.embedder.embed(b).unwrap().0);
            mi += s.mutual_implication(a, b).unwrap().mi;
        }
        for (got, sum) in [(m.mean_ppl, ppl), (m.mean_fluency, fl), (m.mean_sim, sim), (m.mean_mi, mi)] {
            assert!((got - sum / 5.0).abs() < 1e-12);
        }
        assert!(m.mean_ppl > 0.0);
        for x in [m.acc_orig_before, m.acc_adv_after, m.mean_fluency, m.mean_mi] {
            assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn export_shape_and_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        let e = HashedEmbedder::new(16, true);
        let rows = vec![
            (Origin::Original, LabeledExample::new("a good film", 1)),
            (Origin::Adversarial, LabeledExample::new("a nice film", 1)),
            (Origin::Original, LabeledExample::new("a bad plot", 0)),
        ];
        assert_eq!(export_vectors(&rows, &e, &path).unwrap(), 3);
        let mut r = csv::Reader::from_path(&path).unwrap();
        assert_eq!(r.headers().unwrap().len(), 3 + 16);
        let recs: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(recs.len(), 3);
        for (rec, (origin, ex)) in recs.iter().zip(&rows) {
            assert_eq!(&rec[1], origin.tag());
            let want = e.embed(&ex.sentence).unwrap().0;
            for (i, w) in want.iter().enumerate() {
                let got: f64 = rec[3 + i].parse().unwrap();
                assert!((got - w).abs() <= 1e-8 * w.abs().max(1e-300), "{got} vs {w}");
            }
        }
        let first = fs::read(&path).unwrap();
        export_vectors(&rows, &e, &path).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
    }
}
