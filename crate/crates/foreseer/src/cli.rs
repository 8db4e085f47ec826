//! Command-line surface. Every command is reproducible from the config file
//! and seed; outputs land under the config's `output_dir`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use foreseer_core::dataset::{build_dataset, Dataset};
use foreseer_core::env::{EpisodeRecord, EpisodeSource};
use foreseer_core::metrics::{ablation_report, default_ablation_corpus, LabeledNarration, ScoreDistributionReport, TextMetric};
use foreseer_core::policy::{fit_policy_with, ModeMixture};
use foreseer_core::steering::{monitor_rollouts, run_episodes, summarize, MonitorReport, MonitorSource, RunSummary, Selector};
use foreseer_core::verifier::{OracleVerifier, VerifierBackend};
use foreseer_core::worldmodel::{train_world_model, WorldModelParams};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::client::{HttpVerifier, ENDPOINT_VAR, TOKEN_VAR};
use crate::config::{BackendKind, RunConfig, Seeds};
use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Parser)]
#[command(name = "foreseer", version, about = "Steer a multimodal policy with an imagined-outcome verifier")]
pub struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true, env = "RUN_SEED")]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Verifier URL for the client backend.
    #[arg(long, global = true, env = ENDPOINT_VAR)]
    pub endpoint: Option<String>,
    /// Bearer token for the client backend.
    #[arg(long, global = true, env = TOKEN_VAR, hide_env_values = true)]
    pub token: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate demonstrations and policy rollouts.
    GenData {
        /// Overwrite a non-empty data directory.
        #[arg(long)]
        force: bool,
    },
    /// Fit the base policy and train the world model.
    Train {
        /// Skip the policy fit.
        #[arg(long)]
        wm_only: bool,
    },
    /// Run steered (or baseline) episodes.
    Steer(SteerArgs),
    /// Judge recorded rollouts before execution and score the verdicts.
    Monitor(MonitorArgs),
    /// Intra- vs inter-category score distributions of text metrics.
    AblateMetrics {
        /// JSON-lines corpus of `{"category", "text"}`; default is the built-in template corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Also write raw pairwise scores as CSV.
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Oracle,
    Client,
}

#[derive(Debug, Args)]
pub struct SteerArgs {
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Built-in task id, e.g. `cup-serve` or `cup-oily-handle`.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Execute raw policy samples instead of steering.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Imagined,
    GroundTruth,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// JSON-lines episodes with ground-truth labels.
    #[arg(long)]
    pub rollouts: PathBuf,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long, value_enum, default_value = "imagined")]
    pub source: SourceArg,
}

/// Where each artifact lives under `output_dir`.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn train_file(&self) -> PathBuf {
        self.data().join("train.jsonl")
    }
    pub fn test_file(&self) -> PathBuf {
        self.data().join("test.jsonl")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn policy(&self) -> PathBuf {
        self.checkpoints().join("policy.json")
    }
    pub fn world_model(&self) -> PathBuf {
        self.checkpoints().join("worldmodel.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub family: String,
    pub seed: u64,
    pub demo: usize,
    pub rollout: usize,
    pub train: usize,
    pub test: usize,
    pub train_sha256: String,
    pub test_sha256: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerSummaryFile {
    pub config_hash: String,
    #[serde(flatten)]
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorFile {
    pub config_hash: String,
    pub task: String,
    pub source: MonitorSource,
    #[serde(flatten)]
    pub report: MonitorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationFile {
    pub config_hash: String,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(flatten)]
    pub report: ScoreDistributionReport,
}

/// Load the config and apply command-line and environment overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seeds = Seeds::all(s);
    }
    if let Some(o) = &cli.out {
        c.output_dir = o.clone();
    }
    if let Some(e) = &cli.endpoint {
        c.verifier.client.endpoint = Some(e.clone());
    }
    if let Some(t) = &cli.token {
        c.verifier.client.token = Some(t.clone());
    }
    match &cli.command {
        Command::Steer(a) => {
            apply_task_backend(&mut c, a.task.as_deref(), a.backend);
            if let Some(n) = a.episodes {
                c.episodes = n;
            }
        }
        Command::Monitor(a) => apply_task_backend(&mut c, a.task.as_deref(), a.backend),
        Command::AblateMetrics { csv: true, .. } => c.ablation.csv = true,
        _ => {}
    }
    c.validate()?;
    Ok(c)
}

fn apply_task_backend(c: &mut RunConfig, task: Option<&str>, backend: Option<BackendArg>) {
    if let Some(t) = task {
        c.task = t.to_string();
    }
    match backend {
        Some(BackendArg::Oracle) => c.verifier.backend = BackendKind::Oracle,
        Some(BackendArg::Client) => c.verifier.backend = BackendKind::Client,
        None => {}
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = resolve_config(cli)?;
    let layout = Layout {
        root: config.output_dir.clone(),
    };
    match &cli.command {
        Command::GenData { force } => gen_data(&config, &layout, *force).map(|_| ()),
        Command::Train { wm_only } => train(&config, &layout, *wm_only),
        Command::Steer(a) => steer(&config, &layout, a.baseline).map(|_| ()),
        Command::Monitor(a) => monitor(&config, &layout, &a.rollouts, a.source).map(|_| ()),
        Command::AblateMetrics { corpus, .. } => ablate(&config, &layout, corpus.as_deref()).map(|_| ()),
    }
}

pub fn gen_data(config: &RunConfig, layout: &Layout, force: bool) -> Result<DataManifest> {
    let dir = layout.data();
    if io::non_empty_dir(&dir)? && !force {
        return Err(Error::Exists(dir));
    }
    let d = build_dataset(config.family, &config.dataset, config.seeds.data)?;
    io::write_jsonl_rounded(&layout.train_file(), &d.train)?;
    io::write_jsonl_rounded(&layout.test_file(), &d.test)?;
    let m = DataManifest {
        family: config.family.to_string(),
        seed: config.seeds.data,
        demo: d.count(EpisodeSource::Demo),
        rollout: d.count(EpisodeSource::PolicyRollout),
        train: d.train.len(),
        test: d.test.len(),
        train_sha256: io::sha256_file(&layout.train_file())?,
        test_sha256: io::sha256_file(&layout.test_file())?,
        config_hash: config.hash(),
    };
    io::write_json(&dir.join("manifest.json"), &m)?;
    println!(
        "wrote {} episodes (demo {}, rollout {}; train {}, test {}) to {}",
        m.train + m.test,
        m.demo,
        m.rollout,
        m.train,
        m.test,
        dir.display()
    );
    Ok(m)
}

pub fn load_dataset(layout: &Layout) -> Result<Dataset> {
    Ok(Dataset {
        train: io::read_jsonl(&layout.train_file())?,
        test: io::read_jsonl(&layout.test_file())?,
    })
}

pub fn train(config: &RunConfig, layout: &Layout, wm_only: bool) -> Result<()> {
    let data = load_dataset(layout)?;
    if !wm_only {
        let demos: Vec<EpisodeRecord> = data.train.iter().filter(|e| e.source == EpisodeSource::Demo).cloned().collect();
        let policy = fit_policy_with(&demos, &config.policy, config.seeds.policy)?;
        checkpoint::save_policy(&layout.policy(), &policy)?;
        println!("policy: {} modes -> {}", policy.modes.len(), layout.policy().display());
    }
    let mut tc = config.worldmodel.clone();
    tc.seed = config.seeds.worldmodel;
    let out = train_world_model(&data.train, &tc)?;
    println!("{:>7}  {:>12}  {:>12}", "update", "holdout_pred", "open_loop");
    for e in &out.history {
        println!("{:>7}  {:>12.6}  {:>12.6}", e.update, e.holdout_pred, e.holdout_imagined);
    }
    io::write_jsonl(&layout.checkpoints().join("history.jsonl"), &out.history)?;
    checkpoint::save_world_model(&layout.world_model(), &out.params)?;
    println!("world model: {} updates -> {}", out.updates, layout.world_model().display());
    Ok(())
}

fn backend(config: &RunConfig) -> Result<Box<dyn VerifierBackend>> {
    Ok(match config.verifier.backend {
        BackendKind::Oracle => Box::new(OracleVerifier),
        BackendKind::Client => Box::new(HttpVerifier::new(&config.verifier.client)?),
    })
}

/// The fitted policy with the configured skew applied.
pub fn steering_policy(config: &RunConfig, policy: ModeMixture) -> Result<ModeMixture> {
    match &config.skew {
        Some(s) => Ok(policy.skewed_toward(s.mode, s.mass)?),
        None => Ok(policy),
    }
}

pub fn steer(config: &RunConfig, layout: &Layout, baseline: bool) -> Result<SteerSummaryFile> {
    let task = config.task_spec()?;
    let policy = steering_policy(config, checkpoint::load_policy(&layout.policy())?)?;
    let wm: WorldModelParams = checkpoint::load_world_model(&layout.world_model())?;
    let b = backend(config)?;
    let selector = if baseline {
        Selector::Baseline
    } else {
        Selector::Verifier(b.as_ref())
    };
    let traces = run_episodes(
        config.family,
        config.seeds.env,
        config.episodes,
        &policy,
        &wm,
        &config.steering,
        &task,
        selector,
    )
    .map_err(|e| Error::Core(e.into()))?;
    let summary = SteerSummaryFile {
        config_hash: config.hash(),
        summary: summarize(&traces)?,
    };
    let dir = layout
        .root
        .join("steer")
        .join(format!("{}-{}", task.id, summary.summary.selector.replace(':', "-")));
    io::write_jsonl(&dir.join("traces.jsonl"), &traces)?;
    io::write_json(&dir.join("summary.json"), &summary)?;
    let s = &summary.summary;
    println!(
        "{} {}: success {}/{} = {:.2} (95% CI {:.2}..{:.2}), abstained {}",
        s.selector, s.task, s.successes, s.episodes, s.success_rate, s.ci_low, s.ci_high, s.abstentions
    );
    Ok(summary)
}

pub fn monitor(config: &RunConfig, layout: &Layout, rollouts: &Path, source: SourceArg) -> Result<MonitorFile> {
    let task = config.task_spec()?;
    let episodes: Vec<EpisodeRecord> = io::read_jsonl(rollouts)?;
    let wm = checkpoint::load_world_model(&layout.world_model())?;
    let b = backend(config)?;
    let source = match source {
        SourceArg::Imagined => MonitorSource::Imagined,
        SourceArg::GroundTruth => MonitorSource::GroundTruth,
    };
    let report = monitor_rollouts(&episodes, &wm, &task, b.as_ref(), source)?;
    let fmt = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
    println!("{:<6} {:>5} {:>6} {:>6} {:>6}", "task", "n", "ACC", "TPR", "TNR");
    println!(
        "{:<6} {:>5} {:>6.3} {:>6} {:>6}",
        task.id,
        report.n,
        report.acc,
        fmt(report.tpr),
        fmt(report.tnr)
    );
    let file = MonitorFile {
        config_hash: config.hash(),
        task: task.id.clone(),
        source,
        report,
    };
    let name = match source {
        MonitorSource::Imagined => "imagined",
        MonitorSource::GroundTruth => "ground_truth",
    };
    io::write_json(&layout.root.join("monitor").join(format!("{}-{name}.json", task.id)), &file)?;
    Ok(file)
}

pub fn ablate(config: &RunConfig, layout: &Layout, corpus: Option<&Path>) -> Result<Vec<AblationFile>> {
    let corpus: Vec<LabeledNarration> = match corpus {
        Some(p) => io::read_jsonl(p)?,
        None => default_ablation_corpus(config.ablation.per_category),
    };
    let dir = layout.root.join("ablation");
    let mut out = Vec::new();
    for metric in TextMetric::ALL {
        let report = ablation_report(&corpus, metric)?;
        let file = AblationFile {
            config_hash: config.hash(),
            intra_pairs: report.intra_scores.len(),
            inter_pairs: report.inter_scores.len(),
            note: (metric == TextMetric::Cosine)
                .then(|| "bag-of-words TF-IDF over the evaluation corpus, standing in for a sentence embedding".to_string()),
            report,
        };
        println!(
            "{:<15} intra {:>4}  inter {:>4}  AUC {:.3}",
            file.report.metric, file.intra_pairs, file.inter_pairs, file.report.separation_auc
        );
        io::write_json(&dir.join(format!("{}.json", file.report.metric)), &file)?;
        if config.ablation.csv {
            write_pairs_csv(&dir.join(format!("{}.csv", file.report.metric)), &file.report)?;
        }
        out.push(file);
    }
    Ok(out)
}

fn write_pairs_csv(path: &Path, r: &ScoreDistributionReport) -> Result<()> {
    let mut s = String::from("kind,score\n");
    for v in &r.intra_scores {
        s.push_str(&format!("intra,{v}\n"));
    }
    for v in &r.inter_scores {
        s.push_str(&format!("inter,{v}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
