use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "iaa", version, about = "Inter-annotator agreement analysis for multi-annotator segmentations")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// JSON manifest of images, masks and annotator metadata.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "IAA_OUT_DIR", default_value = "iaa-out")]
    pub out: PathBuf,
    /// Seed for every stochastic step; required by stats, split, train and synth.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Side of the square grid masks are resampled onto.
    #[arg(long, global = true, default_value_t = 256)]
    pub grid: usize,
    /// Bootstrap iterations for dominance tests.
    #[arg(long, global = true, default_value_t = 1000)]
    pub iterations: usize,
    /// Significance level for reject / fail-to-reject verdicts.
    #[arg(long = "alpha-level", global = true, default_value_t = 0.001)]
    pub alpha_level: f64,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "IAA_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pairwise Dice/Hausdorff for every image, plus per-image agreement.
    Iaa,
    /// Benign-vs-malignant (or other grouping) agreement statistics.
    Stats(StatsArgs),
    /// Stratified train/valid/test split.
    Split(SplitArgs),
    /// Intra- vs inter-factor agreement table.
    Table(TableArgs),
    /// Train a regression, diagnosis or multi-task network.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a predictions file on one fold.
    Eval(EvalArgs),
    /// Generate a synthetic multi-annotator dataset.
    Synth(SynthArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupBy {
    Malignant,
    Diagnosis,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Per-image agreement JSON; defaults to `<out>/iaa.json`.
    #[arg(long)]
    pub iaa: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "malignant")]
    pub group_by: GroupBy,
    /// The two values to compare when grouping by diagnosis.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub groups: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub iaa: Option<PathBuf>,
    /// Train, valid and test shares.
    #[arg(long, value_delimiter = ',', default_value = "0.70,0.15,0.15")]
    pub ratios: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct TableArgs {
    /// Pair CSV; defaults to `<out>/pairs.csv`.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelArg {
    M1,
    M2,
    Mt,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionArg {
    MinValMae,
    MaxValBalancedAccuracy,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayArg {
    Decoupled,
    Coupled,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FoldArg {
    Train,
    Valid,
    Test,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Split CSV; defaults to `<out>/split.csv`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Per-image agreement JSON; defaults to `<out>/iaa.json` when present.
    #[arg(long)]
    pub iaa: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Diagnosis loss weight; repeat or comma-separate to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long = "lr", default_value_t = 1e-2)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, value_enum, default_value = "decoupled")]
    pub weight_decay_mode: DecayArg,
    #[arg(long, default_value_t = 0.1)]
    pub lr_decay_factor: f64,
    #[arg(long, default_value_t = 10)]
    pub lr_decay_every: usize,
    #[arg(long, value_enum)]
    pub selection: Option<SelectionArg>,
    #[arg(long)]
    pub frozen_regression_head: bool,
    /// Start from this checkpoint's network instead of a fresh one.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Focal loss focusing parameter.
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    /// Smooth-L1 transition point.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 32)]
    pub input_side: usize,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    pub head_hidden: usize,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// CSV with columns image_id, z_hat, p_malignant (either may be blank).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub fold: FoldArg,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub side: usize,
}
