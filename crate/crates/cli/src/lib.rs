//! Command-line experiments: synthetic corpora, training, inference,
//! evaluation, analysis, sweeps and file validation.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use repbank::{Error, ErrorKind};
use serde_json::{Map, Value};

/// Environment variable holding the thread count for parallel kernels.
pub const THREADS_ENV: &str = "ENSEMBLE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "repbank", version, about = "Feature-level ensembling of frozen feature extractors", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic ensemble corpus with a manifest.
    Synth(SynthArgs),
    /// Train decoders and the train-split representation bank.
    Train(RunArgs),
    /// Learn representations for one split against frozen decoders.
    Infer(InferArgs),
    /// k-NN (and optionally linear-probe) reports for every method.
    Eval(EvalArgs),
    /// Singular-value spectra and normalized max-similarity reports.
    Analyze(AnalyzeArgs),
    /// One train-infer-eval cycle per value of a hyperparameter.
    Sweep(SweepArgs),
    /// Check feature, label, checkpoint and manifest files.
    Validate(ValidateArgs),
}

fn bool_flag(s: &str) -> Result<bool, String> {
    s.parse().map_err(|_| format!("expected true or false, got {s:?}"))
}

/// Experiment settings; each flag overrides the same key of `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON config file with flat keys named like these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// train-infer, transfer-infer or baseline-only.
    #[arg(long)]
    pub mode: Option<String>,
    /// Decoder checkpoint (`.mlpw`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub mlp_weight_decay: Option<f64>,
    /// Keep representations non-negative.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = bool_flag)]
    pub nonneg: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub infer_epochs: Option<usize>,
    #[arg(long)]
    pub infer_lr: Option<f64>,
    /// Neighbors for k-NN evaluation.
    #[arg(long)]
    pub k: Option<usize>,
    /// Also run the linear probe.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = bool_flag)]
    pub probe: Option<bool>,
    #[arg(long)]
    pub probe_epochs: Option<usize>,
    #[arg(long)]
    pub probe_batch_size: Option<usize>,
    #[arg(long)]
    pub probe_lr: Option<f64>,
    #[arg(long)]
    pub probe_momentum: Option<f64>,
    /// Comma-separated weight decays for the probe sweep.
    #[arg(long, value_delimiter = ',')]
    pub probe_sweep: Option<Vec<f64>>,
    /// Reference batch size for lr scaling on the batch sweep axis.
    #[arg(long)]
    pub base_batch: Option<usize>,
}

impl Overrides {
    /// The flags that were given, as a config layer.
    pub fn layer(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| Value::from(p.display().to_string()));
        put("manifest", path(&self.manifest));
        put("out", path(&self.out));
        put("mode", self.mode.clone().map(Value::from));
        put("checkpoint", path(&self.checkpoint));
        put("epochs", self.epochs.map(Value::from));
        put("batch_size", self.batch_size.map(Value::from));
        put("lr", self.lr.map(Value::from));
        put("warmup_epochs", self.warmup_epochs.map(Value::from));
        put("depth", self.depth.map(Value::from));
        put("mlp_weight_decay", self.mlp_weight_decay.map(Value::from));
        put("nonneg", self.nonneg.map(Value::from));
        put("seed", self.seed.map(Value::from));
        put("infer_epochs", self.infer_epochs.map(Value::from));
        put("infer_lr", self.infer_lr.map(Value::from));
        put("k", self.k.map(Value::from));
        put("probe", self.probe.map(Value::from));
        put("probe_epochs", self.probe_epochs.map(Value::from));
        put("probe_batch_size", self.probe_batch_size.map(Value::from));
        put("probe_lr", self.probe_lr.map(Value::from));
        put("probe_momentum", self.probe_momentum.map(Value::from));
        put("probe_sweep", self.probe_sweep.clone().map(Value::from));
        put("base_batch", self.base_batch.map(Value::from));
        m
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub cfg: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for repbank::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => repbank::Split::Train,
            SplitArg::Test => repbank::Split::Test,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub cfg: Overrides,
    /// Which manifest split to represent.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

/// Where the learned representations to evaluate live.
#[derive(Debug, Clone, Default, Args)]
pub struct RepsArgs {
    /// Directory of a `train`/`infer` run. Train representations are read from
    /// `train_bank.fstr`, or `train_reps.fstr` when there is no bank; test
    /// representations from `test_reps.fstr`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub train_reps: Option<PathBuf>,
    #[arg(long)]
    pub test_reps: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: Overrides,
    #[command(flatten)]
    pub reps: RepsArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub cfg: Overrides,
    #[command(flatten)]
    pub reps: RepsArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Lr,
    Batch,
    Depth,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub cfg: Overrides,
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated values for the axis.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// JSON file with synthetic-corpus keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus name recorded in the manifest.
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub models: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub view_noise: Option<f64>,
    /// shared or complementary.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the per-model views; corpora sharing it share "models".
    #[arg(long)]
    pub view_seed: Option<u64>,
}

impl SynthArgs {
    pub fn layer(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("n_train", self.n_train.map(Value::from));
        put("n_test", self.n_test.map(Value::from));
        put("dim", self.dim.map(Value::from));
        put("models", self.models.map(Value::from));
        put("num_classes", self.num_classes.map(Value::from));
        put("noise", self.noise.map(Value::from));
        put("view_noise", self.view_noise.map(Value::from));
        put("mode", self.mode.clone().map(Value::from));
        put("seed", self.seed.map(Value::from));
        put("view_seed", self.view_seed.map(Value::from));
        m
    }
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// `FSTR`, `LBLS`, `MLPW` or manifest (`.json`) files.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Input => 2,
        ErrorKind::Shape => 3,
        ErrorKind::Numerical => 4,
    }
}

/// Sizes the global thread pool from `ENSEMBLE_THREADS`, if set.
pub fn init_threads(value: Option<&str>) -> repbank::Result<()> {
    let Some(v) = value else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // A pool built earlier in this process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> repbank::Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Validate(a) => commands::validate(&a),
    }
}
