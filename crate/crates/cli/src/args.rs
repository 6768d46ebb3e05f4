use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "dtc", version, about = "Transfer clustering for novel category discovery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled/unlabelled Gaussian mixture.
    Synth(SynthArgs),
    /// Train an encoder trunk on labelled classes (probe classes held out).
    Pretrain(PretrainArgs),
    /// Cluster unlabelled data with a pretrained encoder.
    Cluster(ClusterArgs),
    /// Estimate the number of novel classes.
    EstimateK(EstimateArgs),
    /// Score an assignments file against ground truth.
    Eval(EvalArgs),
    /// Run one clustering per value of the bottleneck size or cluster count.
    Sweep(SweepArgs),
    /// Re-run a command from its manifest and verify the output digests.
    Replay(ReplayArgs),
}

fn seed_parser() -> clap::builder::RangedU64ValueParser<u64> {
    clap::value_parser!(u64).range(..=i64::MAX as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Baseline,
    Pi,
    Te,
    Tep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Bottleneck,
    K,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub labeled_classes: usize,
    #[arg(long)]
    pub unlabeled_classes: usize,
    #[arg(long)]
    pub per_class: usize,
    #[arg(long)]
    pub dim: usize,
    /// Minimum distance between class means, in within-class standard deviations.
    #[arg(long)]
    pub sep: f64,
    #[arg(long, default_value_t = 0, value_parser = seed_parser())]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub labeled: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Sgd)]
    pub optimizer: OptimizerArg,
    /// Number of labelled classes held out as probes (excluded from training).
    #[arg(long, default_value_t = 0)]
    pub n_probe: usize,
    #[arg(long, default_value_t = 0.8)]
    pub anchor_ratio: f64,
    /// Seed of the probe split; defaults to `--seed`.
    #[arg(long, value_parser = seed_parser())]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = 0, value_parser = seed_parser())]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainOpts {
    #[arg(long, value_enum, default_value_t = VariantArg::Baseline)]
    pub variant: VariantArg,
    /// Main-loop epochs.
    #[arg(long, default_value_t = 90)]
    pub epochs: usize,
    /// Warm-up epochs with frozen targets.
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Sgd)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0.6)]
    pub ema_momentum: f64,
    /// Standard deviation of the input noise for the pi variant.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Bottleneck dimension; defaults to the cluster count.
    #[arg(long)]
    pub bottleneck: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub kmeans_restarts: usize,
    /// Keep the pretrained trunk fixed; only the bottleneck and prototypes move.
    #[arg(long)]
    pub freeze_trunk: bool,
    #[arg(long, default_value_t = 0, value_parser = seed_parser())]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EstimateOpts {
    #[arg(long, default_value_t = 5)]
    pub n_probe: usize,
    #[arg(long, default_value_t = 0.8)]
    pub anchor_ratio: f64,
    /// Seed of the probe split; must match the one used for pretraining.
    #[arg(long, value_parser = seed_parser())]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub k_max: usize,
    #[arg(long, default_value_t = 0.01)]
    pub tau: f64,
    #[arg(long, default_value_t = 10)]
    pub n_init: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ClusterArgs {
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub unlabeled: PathBuf,
    #[arg(long, required_unless_present = "auto_k", conflicts_with = "auto_k")]
    pub k: Option<usize>,
    /// Estimate the cluster count from labelled probe classes first.
    #[arg(long, requires = "labeled")]
    pub auto_k: bool,
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// `id,label` file for the unlabelled rows; enables ACC/NMI reporting.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOpts,
    #[command(flatten)]
    pub estimate: EstimateOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub labeled: PathBuf,
    #[arg(long)]
    pub unlabeled: PathBuf,
    #[command(flatten)]
    pub estimate: EstimateOpts,
    #[arg(long, default_value_t = 0, value_parser = seed_parser())]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// `id,cluster` file.
    #[arg(long)]
    pub assignments: PathBuf,
    /// `id,label` file.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub unlabeled: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_enum)]
    pub sweep: SweepKind,
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub values: Vec<usize>,
    /// Cluster count for bottleneck sweeps.
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Directory for the re-run outputs; defaults to the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
