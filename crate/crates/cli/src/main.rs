//! `tprl`: command-line driver for the paraphrase-attack pipeline.
//!
//! Every verb reads the same TOML config as `run`; stage verbs take the
//! artifacts of earlier stages as explicit paths.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tprl_core::adversarial::{
    adversarial_train, build_adversarial_set, build_adversarial_test, read_adversarial, transfer_experiment,
    write_adversarial, NamedPolicy, NamedVictim, TransferData,
};
use tprl_core::checkpoint;
use tprl_core::corpus_filter::filter_corpus;
use tprl_core::generator::paraphrase;
use tprl_core::pipeline::{
    export_vectors, metrics_report, run_pipeline, smoke_workspace, write_synthetic_workspace, Dataset, Origin, PipelineConfig,
    CLASSIFIER_KIND, POLICY_KIND,
};
use tprl_core::policy::{fit_paraphraser, PolicyParams};
use tprl_core::rl::train;
use tprl_core::synthetic::KeywordTaskConfig;
use tprl_core::textcore::{read_labeled, read_pairs, write_labeled, write_pairs, ParaphrasePair, Sentence};
use tprl_core::victim::{train_classifier, ClassifierParams};
use tprl_core::Execution;

#[derive(Parser)]
#[command(name = "tprl", version, about = "Targeted paraphrase attacks and adversarial training")]
struct Cli {
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the synthetic keyword task and its config into a directory.
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        /// Small task and short fits; finishes in seconds.
        #[arg(long)]
        smoke: bool,
    },
    /// Filter the paraphrase corpus.
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train the victim classifier on the training set.
    TrainVictim {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fit the reference paraphraser on filtered pairs and train it with RL.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        victim: PathBuf,
        /// Filtered pairs; defaults to the config's pair corpus.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Output directory for the policies and the training log.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Paraphrase a labeled file with a policy (no victim, no MI filter).
    Paraphrase {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Build MI-filtered adversarial train and test sets.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        victim: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Retrain the victim on the training set plus adversarial samples.
    AdvTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        adversarial: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Cross-victim transfer matrix.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// `NAME=POLICY_PATH@VICTIM_NAME`, repeatable.
        #[arg(long = "policy", required = true)]
        policies: Vec<String>,
        /// `NAME=VICTIM_PATH`, repeatable.
        #[arg(long = "victim", required = true)]
        victims: Vec<String>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Metrics from persisted artifacts.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        victim: PathBuf,
        #[arg(long)]
        retrained: PathBuf,
        #[arg(long)]
        adversarial: PathBuf,
        #[arg(long)]
        adversarial_test: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Embed original and adversarial sentences to CSV.
    ExportVectors {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        adversarial: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// The full pipeline.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common, cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&common.config).with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if cli.sequential {
        cfg.execution = Execution::Sequential;
    }
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_victim(path: &Path) -> Result<ClassifierParams> {
    checkpoint::load(CLASSIFIER_KIND, path).with_context(|| format!("loading victim {}", path.display()))
}

fn load_policy(path: &Path) -> Result<PolicyParams> {
    checkpoint::load(POLICY_KIND, path).with_context(|| format!("loading policy {}", path.display()))
}

fn split_pair<'a>(arg: &'a str, sep: char, what: &str) -> Result<(&'a str, &'a str)> {
    match arg.split_once(sep) {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a, b)),
        _ => bail!("malformed {what} argument {arg:?}"),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Synth { out, smoke } => {
            let (mut task, cfg) = if *smoke {
                smoke_workspace()
            } else {
                (KeywordTaskConfig::default(), PipelineConfig::synthetic())
            };
            if let Some(seed) = cli.seed {
                task.seed = seed;
            }
            let path = write_synthetic_workspace(out, &task, &cfg)?;
            println!("{}", path.display());
        }
        Cmd::Filter { common, out } => {
            let cfg = load_config(common, &cli)?;
            let data = cfg.load_data()?;
            let scorers = data.scorers(&cfg.scorers);
            let (kept, report) = filter_corpus(&data.pairs, &cfg.filter, scorers.embedder.as_ref(), cfg.execution)?;
            mkdir(out)?;
            write_pairs(&kept, out.join("filtered_pairs.jsonl"))?;
            fs::write(out.join("filter_report.json"), serde_json::to_string_pretty(&report)?)?;
            log::info!("kept {} of {} pairs", kept.len(), data.pairs.len());
        }
        Cmd::TrainVictim { common, out } => {
            let cfg = load_config(common, &cli)?;
            let data = cfg.load_data()?;
            let v = train_classifier(&data.train, data.num_classes, &cfg.victim, cfg.execution)?;
            let hash = checkpoint::save(&v, CLASSIFIER_KIND, out)?;
            println!("{hash}");
        }
        Cmd::TrainPolicy {
            common,
            victim,
            pairs,
            out,
        } => {
            let cfg = load_config(common, &cli)?;
            let data = cfg.load_data()?;
            let victim = load_victim(victim)?;
            let corpus = match pairs {
                Some(p) => read_pairs(p)?,
                None => data.pairs.clone(),
            };
            let scorers = data.scorers(&cfg.scorers);
            let extra: Vec<Sentence> = data.train.iter().map(|e| e.sentence.clone()).collect();
            let (reference, _) = fit_paraphraser(&corpus, &extra, &cfg.paraphraser, cfg.execution)?;
            mkdir(out)?;
            checkpoint::save(&reference, POLICY_KIND, out.join("reference_policy.json"))?;
            let outcome = train(&reference, &victim, &data.train, &scorers, &cfg.rl, cfg.execution)?;
            outcome.log.write_epochs(out.join("training_log.jsonl"))?;
            outcome.log.write_traces(out.join("reward_traces.jsonl"))?;
            let hash = checkpoint::save(&outcome.params, POLICY_KIND, out.join("policy.json"))?;
            println!("{hash}");
        }
        Cmd::Paraphrase {
            common,
            policy,
            input,
            out,
        } => {
            let cfg = load_config(common, &cli)?;
            let data = cfg.load_data()?;
            let scorers = data.scorers(&cfg.scorers);
            let policy = load_policy(policy)?;
            let inputs = read_labeled(input)?;
            let gen = &cfg.adversarial.generator;
            let mut rows = Vec::with_capacity(inputs.len());
            for e in &inputs {
                match paraphrase(&policy, &e.sentence, gen, &scorers, cfg.execution) {
                    Ok(c) => rows.push(ParaphrasePair {
                        source: e.sentence.clone(),
                        target: c.sentence,
                        scores: None,
                    }),
                    Err(err) => log::warn!("skipping {:?}: {err}", e.sentence.text()),
                }
            }
            write_pairs(&rows, out)?;
            log::info!("paraphrased {} of {}", rows.len(), inputs.len());
        }
        Cmd::Attack {
            common,
            policy,
            victim,
            out,
        } => {
            let cfg = load_config(common, &cli)?;
            let data = cfg.load_data()?;
            let scorers = data.scorers(&cfg.scorers);
            let policy = load_policy(policy)?;
            let victim = load_victim(victim)?;
            let (gen, floor, exec) = (&cfg.adversarial.generator, cfg.adversarial.mi_floor, cfg.execution);
            let (adv, stats) = build_adversarial_set(&policy, &data.train, &victim, &scorers, gen, floor, exec)?;
            let (adv_test, _) = build_adversarial_test(&policy, &data.test, &victim, &scorers, gen, floor, exec)?;
            mkdir(out)?;
            write_adversarial(&adv, out.join("adversarial_train.jsonl"))?;
            write_labeled(&adv_test, out.join("adversarial_test.jsonl"))?;
            fs::write(out.join("attack_stats.json"), serde_json::to_string_pretty(&stats)?)?;
            log::info!("{} adversarial train samples, {} adversarial test", adv.len(), adv_test.len());
        }
        Cmd::AdvTrain {
            common,
            adversarial,
            out,
        } => {
            let cfg = load_config(common, &cli)?;
            let data = cfg.load_data()?;
            let adv = read_adversarial(adversarial)?;
            let v = adversarial_train(&data.train, &adv, data.num_classes, &cfg.victim, cfg.execution)?;
            let hash = checkpoint::save(&v, CLASSIFIER_KIND, out)?;
            println!("{hash}");
        }
        Cmd::Transfer {
            common,
            policies,
            victims,
            out,
        } => {
            let cfg = load_config(common, &cli)?;
            let data = cfg.load_data()?;
            let scorers = data.scorers(&cfg.scorers);
            let mut vmap = BTreeMap::new();
            for arg in victims {
                let (name, path) = split_pair(arg, '=', "--victim")?;
                let params = load_victim(Path::new(path))?;
                vmap.insert(
                    name.to_string(),
                    NamedVictim {
                        params,
                        config: cfg.victim.clone(),
                    },
                );
            }
            let mut pmap = BTreeMap::new();
            for arg in policies {
                let (name, rest) = split_pair(arg, '=', "--policy")?;
                let (path, target) = split_pair(rest, '@', "--policy")?;
                let params = load_policy(Path::new(path))?;
                pmap.insert(
                    name.to_string(),
                    NamedPolicy {
                        params,
                        target: target.to_string(),
                    },
                );
            }
            let Dataset {
                train, test, num_classes, ..
            } = &data;
            let td = TransferData {
                train,
                test,
                num_classes: *num_classes,
                gen: cfg.adversarial.generator.clone(),
                mi_floor: cfg.adversarial.mi_floor,
            };
            let m = transfer_experiment(&pmap, &vmap, &td, &scorers, cfg.execution)?;
            m.save_csv(out)?;
        }
        Cmd::Evaluate {
            common,
            victim,
            retrained,
            adversarial,
            adversarial_test,
            out,
        } => {
            let cfg = load_config(common, &cli)?;
            let data = cfg.load_data()?;
            let scorers = data.scorers(&cfg.scorers);
            let before = load_victim(victim)?;
            let after = load_victim(retrained)?;
            let adv = read_adversarial(adversarial)?;
            let adv_test = read_labeled(adversarial_test)?;
            let pairs: Vec<_> = adv.iter().map(|s| (s.original.sentence.clone(), s.adversarial.clone())).collect();
            let m = metrics_report(&pairs, &scorers, &before, &after, &data.test, &adv_test, cfg.execution)?;
            mkdir(out)?;
            m.write_csv(fs::File::create(out.join("results.csv"))?)?;
            fs::write(out.join("results.txt"), m.text_table("victim"))?;
            fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&m)?)?;
            print!("{}", m.text_table("victim"));
        }
        Cmd::ExportVectors {
            common,
            adversarial,
            out,
        } => {
            let cfg = load_config(common, &cli)?;
            let data = cfg.load_data()?;
            let scorers = data.scorers(&cfg.scorers);
            let adv = read_adversarial(adversarial)?;
            let rows: Vec<_> = adv
                .iter()
                .flat_map(|s| [(Origin::Original, s.original.clone()), (Origin::Adversarial, s.labeled())])
                .collect();
            let n = export_vectors(&rows, scorers.embedder.as_ref(), out)?;
            log::info!("wrote {n} vectors");
        }
        Cmd::Run { common, out } => {
            let cfg = load_config(common, &cli)?;
            let res = run_pipeline(&cfg, out)?;
            print!("{}", res.metrics.text_table("victim"));
        }
    }
    Ok(())
}
