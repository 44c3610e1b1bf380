//! `ldwnet`: cost analysis, splitting, training, evaluation, classification
//! maps and focal-loss γ sweeps for hyperspectral scenes.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "ldwnet", version, about = "LiteDepthwiseNet hyperspectral image classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-layer parameter and FLOP report
    #[command(args_override_self = true)]
    Analyze(AnalyzeArgs),
    /// Stratified train / validation / test split of the labeled pixels
    #[command(args_override_self = true)]
    Split(SplitArgs),
    /// Train a network and write its checkpoint and loss history
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// OA, AA, Kappa and the confusion matrix for a checkpoint
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Predicted and ground-truth class maps as PPM images
    #[command(args_override_self = true)]
    Map(MapArgs),
    /// Train and test once per focal-loss γ
    #[command(args_override_self = true)]
    GammaSweep(SweepArgs),
    /// Write a synthetic scene in the HSC1 / HSL1 formats
    #[command(args_override_self = true)]
    Synth(SynthArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct RunArgs {
    /// File of `key = value` defaults; flags on the command line win
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for outputs and the run manifest
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses one per core
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct SceneArgs {
    /// HSC1 cube file
    #[arg(long)]
    pub cube: PathBuf,
    /// HSL1 label file
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum, default_value_t = NormArg::Standardize)]
    pub normalize: NormArg,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormArg {
    /// Zero mean, unit variance per band
    Standardize,
    /// Rescale each band to [0, 1]
    Minmax,
    None,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimArg {
    Adam,
    Sgd,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    /// Cross entropy
    Cel,
    /// Balanced cross entropy
    Bcel,
    /// Focal loss
    #[value(alias = "fl")]
    Focal,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaModeArg {
    /// Use `--alpha` as given
    Fixed,
    /// Inverse training-set class frequency
    Freq,
}

/// Comma-separated numbers taken as one value, so a repeated flag replaces
/// the earlier list instead of extending it.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct FloatList(pub Vec<f64>);

impl std::str::FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(FloatList)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub bands: usize,
    #[arg(long, default_value_t = 16)]
    pub classes: usize,
    /// Patch size the network is built for
    #[arg(long, default_value_t = 9)]
    pub patch: usize,
    /// Spatial extent of the analyzed input
    #[arg(long, default_value_t = 25)]
    pub input_hw: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct SplitArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, alias = "ratio")]
    pub train_ratio: f64,
    #[arg(long, default_value_t = 0.0)]
    pub val_ratio: f64,
    #[arg(long, default_value_t = 5)]
    pub min_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    /// split.csv written by `ldwnet split`
    #[arg(long)]
    pub split_plan: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub patch: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimArg::Adam)]
    pub optimizer: OptimArg,
    /// SGD momentum
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Focal)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value_t = AlphaModeArg::Freq)]
    pub alpha_mode: AlphaModeArg,
    /// One value for every class, or one per class (comma separated)
    #[arg(long, default_value = "1")]
    pub alpha: FloatList,
    /// Seeds parameter initialization and batch order
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop after this many epochs without validation improvement
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    /// Recorded in the manifest; kernels always reduce in a fixed order
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Test,
    Val,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split_plan: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    pub split: EvalSplit,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct MapArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Classify unlabeled pixels too instead of leaving them black
    #[arg(long)]
    pub all_pixels: bool,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// γ grid, comma separated
    #[arg(long, default_value = "0,0.5,1,2,5")]
    pub gammas: FloatList,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Three well separated classes
    Separable,
    /// A 20:1 majority / minority pair with overlapping spectra
    Imbalanced,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value_t = SynthKind::Separable)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 16)]
    pub bands: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output stem; writes `<name>.hsc` and `<name>.hsl`
    #[arg(long, default_value = "synthetic")]
    pub name: String,
}

fn run() -> anyhow::Result<()> {
    let args = config::expand(std::env::args_os().collect())?;
    let cli = Cli::parse_from(args);
    match cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Map(a) => commands::map(a),
        Command::GammaSweep(a) => commands::gamma_sweep(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
