//! `seq2cause`: generate synthetic processes, run discovery, fuse, evaluate
//! and benchmark.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<seq2cause::Error> for CliError {
    fn from(e: seq2cause::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.into())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Parser)]
#[command(name = "seq2cause", version, about = "Causal discovery on discrete event sequences")]
pub struct Cli {
    /// TOML experiment configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Outputs do not depend on it.
    #[arg(long, global = true, env = "SEQ2CAUSE_THREADS", default_value_t = 0)]
    pub workers: usize,
    /// Directory for outputs (overrides `io.out_dir`).
    #[arg(long, global = true, visible_alias = "out")]
    pub out_dir: Option<PathBuf>,
    /// Master seed (overrides `seed` and every section seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a random lagged-softmax SCM and write it as JSON.
    GenScm(ScmFlags),
    /// Sample event sequences from an SCM.
    Sample(SampleArgs),
    /// Attach Boolean-rule labels to a dataset.
    PlantLabels(PlantArgs),
    /// Per-sequence Markov boundaries of labels.
    DiscoverOscar(OscarArgs),
    /// Merge per-sequence Markov-boundary graphs.
    Fuse(FuseArgs),
    /// Event-to-event instance and summary graphs.
    DiscoverTrace(TraceArgs),
    /// Compare predicted graphs with ground truth.
    Eval(EvalArgs),
    /// Run a benchmark over seeds and write per-run rows plus a summary.
    Bench(BenchArgs),
    /// Answer estimator queries on stdin/stdout for an SCM oracle.
    Serve(ServeArgs),
}

#[derive(Args, Default)]
pub struct ScmFlags {
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub memory: Option<usize>,
    /// Fraction of nonzero entries per lag matrix.
    #[arg(long)]
    pub density: Option<f64>,
    /// Lag decay factor.
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub weight_scale: Option<f64>,
    #[arg(long)]
    pub bias_scale: Option<f64>,
}

#[derive(Args)]
pub struct SampleArgs {
    /// SCM JSON; generated from the SCM flags when absent.
    #[arg(long)]
    pub scm: Option<PathBuf>,
    #[command(flatten)]
    pub gen: ScmFlags,
    /// Events per sequence.
    #[arg(long)]
    pub len: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Args)]
pub struct PlantArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// SCM JSON, used for the vocabulary.
    #[arg(long, conflicts_with = "vocab")]
    pub scm: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Rule such as "x1 & !x4"; repeat for several labels.
    #[arg(long = "rule")]
    pub rules: Vec<String>,
    #[arg(long)]
    pub n_labels: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum EstimatorArg {
    Exact,
    Perturbed,
    Learned,
}

#[derive(Args)]
pub struct DensityArgs {
    /// SCM JSON for oracle estimators.
    #[arg(long)]
    pub scm: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    /// Target per-step KL of the perturbed oracle.
    #[arg(long)]
    pub eps: Option<f64>,
    /// External estimator command (protocol on stdin/stdout).
    #[arg(long, num_args = 1.., conflicts_with_all = ["estimator", "scm"])]
    pub bridge: Option<Vec<String>>,
    /// Vocabulary size when no SCM is given.
    #[arg(long)]
    pub vocab: Option<usize>,
}

#[derive(Args)]
pub struct OscarArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Label plan JSON for the rollout posterior.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[command(flatten)]
    pub density: DensityArgs,
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Analyze every label, not only the positive ones.
    #[arg(long)]
    pub all_labels: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Union,
    Static,
    Adaptive,
}

#[derive(Args)]
pub struct FuseArgs {
    /// Markov-boundary graphs, one JSON document per line.
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Frequency threshold of the static strategy.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub tau_max: Option<f64>,
    #[arg(long)]
    pub tau_min: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Full,
    Sparse,
}

#[derive(Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub density: DensityArgs,
    /// Edge threshold; accepts `inf`.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Lag bound of the sparse variant.
    #[arg(long)]
    pub memory: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Predicted graphs (JSON or JSONL).
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference graphs of the same kind and count.
    #[arg(long, conflicts_with = "plan")]
    pub truth: Option<PathBuf>,
    /// Label plan: rule variables are the reference boundaries.
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum BenchKindArg {
    Trace,
    Oscar,
    FusionSim,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub kind: Option<BenchKindArg>,
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Sequences per run.
    #[arg(long)]
    pub count: Option<usize>,
    /// Vocabulary size of the benchmark process.
    #[arg(long)]
    pub vocab: Option<usize>,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub scm: PathBuf,
    /// Label plan; enables `label_post` requests.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub horizon: usize,
    #[arg(long, default_value_t = 32)]
    pub rollouts: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
