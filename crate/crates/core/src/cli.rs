//! Argument and config-file handling plus command dispatch for the `slogan`
//! binary.
//!
//! Every option can come from a flag, from a flat JSON object passed with
//! `--config` (keys are the flag names without dashes in front), from the
//! environment (`SLOGAN_OUT` only) or from the built-in defaults, in that
//! order of precedence. Each run stages its outputs and moves them into the
//! output directory only when the command succeeds.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Real, Rng};
use crate::graphdata::{
    density_split, gen_synthetic_biased, parse_tudataset, parse_tudataset_group, write_tudataset, Dataset, Domain,
    SynthConfig,
};
use crate::trainer::{
    ablate_seed, adapt, bench_scaling, bound_audit, evaluate, features_csv, metrics_csv, warmup, warmup_csv,
    write_json, write_text, Ablation, AblationTable, ArtifactWriter, BenchConfig, EvalReport, Model, TrainConfig,
};

/// Output directory when neither a flag, the config file nor `SLOGAN_OUT` names one.
pub const DEFAULT_OUT: &str = "slogan-out";
pub const OUT_ENV: &str = "SLOGAN_OUT";
const DATA_STREAM: u64 = 30;
const DEFAULT_PARTS: usize = 4;
const DEFAULT_ABLATION_SEEDS: usize = 5;

#[derive(Parser, Debug)]
#[command(name = "slogan", version, about = "Unsupervised graph domain adaptation by causal/spurious disentanglement")]
struct Cli {
    #[command(subcommand)]
    command: CommandArgs,
}

#[derive(Subcommand, Debug)]
enum CommandArgs {
    /// Generate a synthetic source/target pair and write it as TUDataset files.
    GenSynth(Options),
    /// Split a TUDataset into sub-datasets of increasing graph density.
    Split(Options),
    /// Train on the labelled source only.
    TrainSource(Options),
    /// Warm up on the source, then adapt to the target.
    Adapt(Options),
    /// Score the model saved in the output directory.
    Eval(Options),
    /// Full run against each single-component ablation over several seeds.
    Ablate(Options),
    /// Report the measurable quantities of the target-error bound.
    AuditBound(Options),
    /// Time forward+backward against total node count.
    BenchScaling(Options),
    /// Write causal/spurious features of the saved model.
    DumpFeatures(Options),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GenSynth,
    Split,
    TrainSource,
    Adapt,
    Eval,
    Ablate,
    AuditBound,
    BenchScaling,
    DumpFeatures,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenSynth => "gen-synth",
            Command::Split => "split",
            Command::TrainSource => "train-source",
            Command::Adapt => "adapt",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
            Command::AuditBound => "audit-bound",
            Command::BenchScaling => "bench-scaling",
            Command::DumpFeatures => "dump-features",
        }
    }
}

/// Every option as it appears on the command line or in a config file.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Options {
    /// Flat JSON file with default values for any of the options below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory (falls back to $SLOGAN_OUT).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_root: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_name: Option<String>,
    /// Second TUDataset for cross-dataset transfer instead of a density split.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_dataset_name: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_s: Option<Real>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_per_domain: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parts: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_idx: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_idx: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Real>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<Real>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<Real>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Real>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<Real>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic_lr: Option<Real>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adapt_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Disable one component: no_dis, no_inv or no_sup_target.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablate: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symmetric_swap: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_grad_target: Option<bool>,
    /// Seeds `seed, seed+1, ...` used by `ablate`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_seeds: Option<usize>,
    /// Write `features_{epoch}.csv` every this many adaptation epochs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features_every: Option<usize>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),* $(,)?) => {
        Options { config: $hi.config.or($lo.config), $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Options {
    /// Field-wise `self` where set, otherwise `lower`.
    pub fn over(self, lower: Options) -> Options {
        overlay!(
            self, lower, out, dataset_root, dataset_name, target_dataset_name, synthetic, rho_s, n_per_domain,
            parts, source_idx, target_idx, gamma, eta, tau, beta, lr, critic_lr, batch_size, warmup_epochs,
            adapt_epochs, seed, ablate, symmetric_swap, stop_grad_target, num_seeds, features_every,
        )
    }

    pub fn from_json_file(path: &Path) -> Result<Options> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSpec {
    TuDataset { root: PathBuf, name: String, target_name: Option<String> },
    Synthetic(SynthConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub parts: usize,
    pub source_idx: usize,
    pub target_idx: usize,
}

/// Fully resolved and validated run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub data: Option<DataSpec>,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub ablation: Option<Ablation>,
    pub num_seeds: usize,
    pub features_every: Option<usize>,
    pub out: PathBuf,
}

impl RunConfig {
    /// Flat options that resolve back to this configuration.
    pub fn echo(&self) -> Options {
        let t = &self.train;
        let mut o = Options {
            out: Some(self.out.clone()),
            gamma: Some(t.gamma),
            eta: Some(t.eta),
            tau: Some(t.tau),
            beta: Some(t.beta),
            lr: Some(t.lr),
            critic_lr: Some(t.critic_lr),
            batch_size: Some(t.batch_size),
            warmup_epochs: Some(t.warmup_epochs),
            adapt_epochs: Some(t.adapt_epochs),
            seed: Some(t.seed),
            ablate: self.ablation.map(|a| a.name().to_string()),
            symmetric_swap: Some(t.symmetric_swap),
            stop_grad_target: Some(t.stop_grad_target),
            num_seeds: Some(self.num_seeds),
            features_every: self.features_every,
            ..Options::default()
        };
        match &self.data {
            Some(DataSpec::Synthetic(s)) => {
                o.synthetic = Some(true);
                o.rho_s = Some(s.rho_s);
                o.n_per_domain = Some(s.n_per_domain);
            }
            Some(DataSpec::TuDataset { root, name, target_name }) => {
                o.dataset_root = Some(root.clone());
                o.dataset_name = Some(name.clone());
                o.target_dataset_name = target_name.clone();
                if target_name.is_none() {
                    o.parts = Some(self.split.parts);
                    o.source_idx = Some(self.split.source_idx);
                    o.target_idx = Some(self.split.target_idx);
                }
            }
            None => {}
        }
        o
    }

    fn data(&self) -> Result<&DataSpec> {
        self.data.as_ref().ok_or_else(|| {
            Error::config("dataset-name", format!("`{}` needs --dataset-name or --synthetic", self.command.name()))
        })
    }
}

fn resolve_data(command: Command, o: &Options) -> Result<Option<DataSpec>> {
    let synthetic = o.synthetic.unwrap_or(false) || (command == Command::GenSynth && o.dataset_name.is_none());
    if synthetic {
        for (key, set) in [
            ("dataset-name", o.dataset_name.is_some()),
            ("dataset-root", o.dataset_root.is_some()),
            ("target-dataset-name", o.target_dataset_name.is_some()),
        ] {
            if set {
                return Err(Error::config(key, "conflicts with --synthetic"));
            }
        }
        let d = SynthConfig::default();
        let s = SynthConfig {
            rho_s: o.rho_s.unwrap_or(d.rho_s),
            n_per_domain: o.n_per_domain.unwrap_or(d.n_per_domain),
            ..d
        };
        s.validate()?;
        return Ok(Some(DataSpec::Synthetic(s)));
    }
    for (key, set) in [("rho-s", o.rho_s.is_some()), ("n-per-domain", o.n_per_domain.is_some())] {
        if set {
            return Err(Error::config(key, "only applies with --synthetic"));
        }
    }
    match &o.dataset_name {
        Some(name) => Ok(Some(DataSpec::TuDataset {
            root: o.dataset_root.clone().unwrap_or_else(|| PathBuf::from(".")),
            name: name.clone(),
            target_name: o.target_dataset_name.clone(),
        })),
        None if o.target_dataset_name.is_some() => {
            Err(Error::config("target-dataset-name", "requires --dataset-name"))
        }
        None => Ok(None),
    }
}

fn resolve_split(data: Option<&DataSpec>, o: &Options) -> Result<SplitSpec> {
    let cross = matches!(data, Some(DataSpec::TuDataset { target_name: Some(_), .. }));
    if cross {
        for (key, set) in [("parts", o.parts), ("source-idx", o.source_idx), ("target-idx", o.target_idx)] {
            if set.is_some() {
                return Err(Error::config(key, "conflicts with --target-dataset-name"));
            }
        }
    }
    let split = SplitSpec {
        parts: o.parts.unwrap_or(DEFAULT_PARTS),
        source_idx: o.source_idx.unwrap_or(0),
        target_idx: o.target_idx.unwrap_or(1),
    };
    if split.parts < 2 {
        return Err(Error::config("parts", format!("must be at least 2, got {}", split.parts)));
    }
    if split.source_idx >= split.parts {
        return Err(Error::config("source-idx", format!("{} outside 0..{}", split.source_idx, split.parts)));
    }
    if split.target_idx >= split.parts {
        return Err(Error::config("target-idx", format!("{} outside 0..{}", split.target_idx, split.parts)));
    }
    if split.source_idx == split.target_idx {
        return Err(Error::config("target-idx", "source and target index must differ"));
    }
    Ok(split)
}

/// Merges flags over the `--config` file over `SLOGAN_OUT` over defaults,
/// then validates the result.
pub fn resolve(command: Command, flags: Options) -> Result<RunConfig> {
    let file = match &flags.config {
        Some(path) => Options::from_json_file(path)?,
        None => Options::default(),
    };
    let env = Options { out: std::env::var_os(OUT_ENV).map(PathBuf::from), ..Options::default() };
    let o = flags.over(file).over(env);

    let data = resolve_data(command, &o)?;
    let split = resolve_split(data.as_ref(), &o)?;
    let ablation = o.ablate.as_deref().map(str::parse::<Ablation>).transpose()?;
    let d = TrainConfig::default();
    let train = TrainConfig {
        gamma: o.gamma.unwrap_or(d.gamma),
        eta: o.eta.unwrap_or(d.eta),
        tau: o.tau.unwrap_or(d.tau),
        beta: o.beta.unwrap_or(d.beta),
        lr: o.lr.unwrap_or(d.lr),
        critic_lr: o.critic_lr.unwrap_or(d.critic_lr),
        batch_size: o.batch_size.unwrap_or(d.batch_size),
        warmup_epochs: o.warmup_epochs.unwrap_or(d.warmup_epochs),
        adapt_epochs: o.adapt_epochs.unwrap_or(d.adapt_epochs),
        seed: o.seed.unwrap_or(d.seed),
        symmetric_swap: o.symmetric_swap.unwrap_or(false),
        stop_grad_target: o.stop_grad_target.unwrap_or(false),
        ..d
    }
    .with_ablation(ablation);
    train.validate()?;
    let num_seeds = o.num_seeds.unwrap_or(if command == Command::Ablate { DEFAULT_ABLATION_SEEDS } else { 1 });
    if num_seeds == 0 {
        return Err(Error::config("num-seeds", "must be positive"));
    }
    Ok(RunConfig {
        command,
        data,
        split,
        train,
        ablation,
        num_seeds,
        features_every: o.features_every,
        out: o.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
    })
}

/// Parses `argv` (program name first) and resolves it into a [`RunConfig`].
pub fn parse_args_and_config<I, T>(argv: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let (command, flags) = split_command(cli.command);
    resolve(command, flags)
}

fn split_command(c: CommandArgs) -> (Command, Options) {
    match c {
        CommandArgs::GenSynth(o) => (Command::GenSynth, o),
        CommandArgs::Split(o) => (Command::Split, o),
        CommandArgs::TrainSource(o) => (Command::TrainSource, o),
        CommandArgs::Adapt(o) => (Command::Adapt, o),
        CommandArgs::Eval(o) => (Command::Eval, o),
        CommandArgs::Ablate(o) => (Command::Ablate, o),
        CommandArgs::AuditBound(o) => (Command::AuditBound, o),
        CommandArgs::BenchScaling(o) => (Command::BenchScaling, o),
        CommandArgs::DumpFeatures(o) => (Command::DumpFeatures, o),
    }
}

/// Synthetic pair for a run seed.
pub fn synthetic_pair(cfg: &SynthConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    gen_synthetic_biased(cfg, &mut Rng::new(seed).stream(DATA_STREAM))
}

/// Source and target datasets described by `spec`; domains are tagged.
pub fn load_pair(spec: &DataSpec, split: &SplitSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    let (source, target) = match spec {
        DataSpec::Synthetic(s) => synthetic_pair(s, seed)?,
        DataSpec::TuDataset { root, name, target_name: Some(t) } => {
            let mut group = parse_tudataset_group(root, &[name, t])?;
            let target = group.pop().expect("two datasets");
            (group.pop().expect("two datasets"), target)
        }
        DataSpec::TuDataset { root, name, target_name: None } => {
            let mut parts = density_split(&parse_tudataset(root, name)?, split.parts)?;
            let target = parts[split.target_idx].clone();
            (parts.swap_remove(split.source_idx), target)
        }
    };
    Ok((source.with_domain(Domain::Source), target.with_domain(Domain::Target)))
}

/// Output staging area: files are written under a hidden directory inside
/// the output directory and moved into place by [`Staging::commit`]. Dropping
/// an uncommitted stage deletes everything written so far.
struct Staging {
    out: PathBuf,
    dir: PathBuf,
    committed: bool,
}

impl Staging {
    fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let dir = out.join(format!(".staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { out: out.to_path_buf(), dir, committed: false })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn commit(mut self) -> Result<()> {
        let entries = fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.dir, e))?;
            let dest = self.out.join(entry.file_name());
            if dest.is_dir() {
                fs::remove_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
            }
            fs::rename(entry.path(), &dest).map_err(|e| Error::io(&dest, e))?;
        }
        fs::remove_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

/// Contents of `result.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub command: String,
    pub source: String,
    pub target: String,
    pub source_acc: Real,
    /// Only when the target carries labels; they never reach training.
    pub target_acc: Option<Real>,
    /// Target accuracy of the warmed-up model before adaptation.
    pub source_only_target_acc: Option<Real>,
    pub epochs_done: usize,
    pub final_confident_size: Option<usize>,
    pub config: Options,
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    source: &'a EvalReport,
    target: Option<&'a EvalReport>,
}

fn target_accuracy(target: &Dataset, model: &Model) -> Result<Option<Real>> {
    if target.is_labelled() {
        Ok(Some(evaluate(target, model)?.accuracy))
    } else {
        Ok(None)
    }
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("model.json")
}

fn fmt_opt(v: Option<Real>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Executes the command and returns its one-line summary.
pub fn run(cfg: &RunConfig) -> Result<String> {
    let stage = Staging::new(&cfg.out)?;
    write_json(stage.path("config_echo.json"), &cfg.echo())?;
    let summary = match cfg.command {
        Command::GenSynth => gen_synth(cfg, &stage)?,
        Command::Split => split(cfg, &stage)?,
        Command::TrainSource => train_source(cfg, &stage)?,
        Command::Adapt => run_adapt(cfg, &stage)?,
        Command::Eval => eval(cfg, &stage)?,
        Command::Ablate => run_ablate(cfg, &stage)?,
        Command::AuditBound => audit(cfg, &stage)?,
        Command::BenchScaling => bench(cfg, &stage)?,
        Command::DumpFeatures => dump_features(cfg, &stage)?,
    };
    stage.commit()?;
    Ok(summary)
}

fn gen_synth(cfg: &RunConfig, stage: &Staging) -> Result<String> {
    let DataSpec::Synthetic(s) = cfg.data()? else {
        return Err(Error::config("synthetic", "gen-synth only generates synthetic data"));
    };
    let (source, target) = synthetic_pair(s, cfg.train.seed)?;
    for ds in [&source, &target] {
        write_tudataset(ds, stage.path(&ds.name), &ds.name)?;
    }
    Ok(format!(
        "gen-synth: wrote {} source and {} target graphs to {}",
        source.len(),
        target.len(),
        cfg.out.display()
    ))
}

fn split(cfg: &RunConfig, stage: &Staging) -> Result<String> {
    let DataSpec::TuDataset { root, name, target_name: None } = cfg.data()? else {
        return Err(Error::config("dataset-name", "split needs a single TUDataset"));
    };
    let parts = density_split(&parse_tudataset(root, name)?, cfg.split.parts)?;
    let mut sizes = Vec::with_capacity(parts.len());
    for (k, part) in parts.iter().enumerate() {
        let sub = format!("N{k}");
        write_tudataset(part, stage.path(&sub), &sub)?;
        sizes.push(format!("N{k}={} (density {:.3})", part.len(), part.mean_density()));
    }
    Ok(format!("split: {name} into {}", sizes.join(", ")))
}

fn train_source(cfg: &RunConfig, stage: &Staging) -> Result<String> {
    let (source, target) = load_pair(cfg.data()?, &cfg.split, cfg.train.seed)?;
    let (model, report) = warmup(&source, &cfg.train)?;
    write_text(stage.path("warmup.csv"), &warmup_csv(&report.epochs))?;
    model.save(stage.path("model.json"))?;
    let target_acc = target_accuracy(&target, &model)?;
    let result = RunResult {
        command: cfg.command.name().into(),
        source: source.name.clone(),
        target: target.name.clone(),
        source_acc: report.source_train_acc,
        target_acc,
        source_only_target_acc: target_acc,
        epochs_done: model.epochs_done,
        final_confident_size: None,
        config: cfg.echo(),
    };
    write_json(stage.path("result.json"), &result)?;
    Ok(format!(
        "train-source: {} epochs, source acc {:.4}, target acc {}",
        model.epochs_done,
        result.source_acc,
        fmt_opt(target_acc)
    ))
}

fn run_adapt(cfg: &RunConfig, stage: &Staging) -> Result<String> {
    let (source, target) = load_pair(cfg.data()?, &cfg.split, cfg.train.seed)?;
    let (mut model, warm) = warmup(&source, &cfg.train)?;
    write_text(stage.path("warmup.csv"), &warmup_csv(&warm.epochs))?;
    let source_only = target_accuracy(&target, &model)?;
    let mut writer = ArtifactWriter::new(&stage.dir, vec![&source, &target], cfg.features_every);
    let report = adapt(&mut model, &source, &target, &cfg.train, &mut writer)?;
    write_text(stage.path("metrics.csv"), &metrics_csv(&report.epochs))?;
    model.save(stage.path("model.json"))?;
    let result = RunResult {
        command: cfg.command.name().into(),
        source: source.name.clone(),
        target: target.name.clone(),
        source_acc: evaluate(&source, &model)?.accuracy,
        target_acc: target_accuracy(&target, &model)?,
        source_only_target_acc: source_only,
        epochs_done: model.epochs_done,
        final_confident_size: report.epochs.last().map(|e| e.confident_size),
        config: cfg.echo(),
    };
    write_json(stage.path("result.json"), &result)?;
    Ok(format!(
        "adapt: {} -> {}, source acc {:.4}, target acc {} (source-only {})",
        result.source,
        result.target,
        result.source_acc,
        fmt_opt(result.target_acc),
        fmt_opt(source_only)
    ))
}

fn eval(cfg: &RunConfig, stage: &Staging) -> Result<String> {
    let model = Model::load(model_path(cfg))?;
    let (source, target) = load_pair(cfg.data()?, &cfg.split, cfg.train.seed)?;
    let src = evaluate(&source, &model)?;
    let tgt = if target.is_labelled() { Some(evaluate(&target, &model)?) } else { None };
    write_json(stage.path("eval.json"), &EvalOutput { source: &src, target: tgt.as_ref() })?;
    let result = RunResult {
        command: cfg.command.name().into(),
        source: source.name.clone(),
        target: target.name.clone(),
        source_acc: src.accuracy,
        target_acc: tgt.as_ref().map(|t| t.accuracy),
        source_only_target_acc: None,
        epochs_done: model.epochs_done,
        final_confident_size: None,
        config: cfg.echo(),
    };
    write_json(stage.path("result.json"), &result)?;
    Ok(format!(
        "eval: source acc {:.4}, target acc {}",
        src.accuracy,
        fmt_opt(result.target_acc)
    ))
}

fn run_ablate(cfg: &RunConfig, stage: &Staging) -> Result<String> {
    let spec = cfg.data()?;
    let mut rows = Vec::with_capacity(cfg.num_seeds);
    for k in 0..cfg.num_seeds as u64 {
        let seed = cfg.train.seed + k;
        let (source, target) = load_pair(spec, &cfg.split, seed)?;
        rows.push(ablate_seed(&source, &target, &TrainConfig { seed, ..cfg.train.clone() })?);
    }
    let table = AblationTable { rows };
    write_text(stage.path("ablation.csv"), &table.to_csv())?;
    write_json(stage.path("ablation.json"), &table)?;
    let m = table.mean();
    Ok(format!(
        "ablate: {} seeds, mean target acc source_only {:.4} full {:.4} no_sup_target {:.4} no_inv {:.4} no_dis {:.4}",
        table.rows.len(),
        m.source_only,
        m.full,
        m.no_sup_target,
        m.no_inv,
        m.no_dis
    ))
}

fn audit(cfg: &RunConfig, stage: &Staging) -> Result<String> {
    let model = Model::load(model_path(cfg))?;
    let (source, target) = load_pair(cfg.data()?, &cfg.split, cfg.train.seed)?;
    let a = bound_audit(&model, &source, &target, cfg.train.seed)?;
    write_json(stage.path("audit.json"), &a)?;
    Ok(format!(
        "audit-bound: source error {:.4}, I(z^s;y) proxy {:.4}, reconstruction residual {:.4}, target error {}",
        a.source_error,
        a.spurious_label_mi,
        a.reconstruction_residual,
        fmt_opt(a.target_error)
    ))
}

fn bench(cfg: &RunConfig, stage: &Staging) -> Result<String> {
    let report = bench_scaling(&BenchConfig { seed: cfg.train.seed, ..BenchConfig::default() })?;
    write_text(stage.path("bench.csv"), &report.to_csv())?;
    write_json(stage.path("bench.json"), &report)?;
    Ok(format!(
        "bench-scaling: {} sizes, {:.3e} s per node, R^2 {:.4}",
        report.rows.len(),
        report.slope,
        report.r_squared
    ))
}

fn dump_features(cfg: &RunConfig, stage: &Staging) -> Result<String> {
    let model = Model::load(model_path(cfg))?;
    let (source, target) = load_pair(cfg.data()?, &cfg.split, cfg.train.seed)?;
    let name = format!("features_{}.csv", model.epochs_done);
    write_text(stage.path(&name), &features_csv(&model, &[&source, &target])?)?;
    Ok(format!("dump-features: {} graphs to {}", source.len() + target.len(), cfg.out.join(name).display()))
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (command, flags) = split_command(cli.command);
    match resolve(command, flags).and_then(|cfg| run(&cfg)) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
