use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use foundad_core::dataset::Layout;
use foundad_core::ProviderSpec;

const DEFAULT_PROVIDER: &str = "toy:dim=64,patch=16,seed=7";

#[derive(Debug, Parser)]
#[command(name = "foundad", version, about = "Few-shot anomaly detection with a manifold projector")]
#[command(after_help = "Set FOUNDAD_THREADS to cap the number of worker threads.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a seeded k-shot manifest of normal training images
    Sample(SampleArgs),
    /// Train a projector on the images selected by a manifest
    Train(TrainArgs),
    /// Score test images and write scores plus heatmaps
    Score(ScoreArgs),
    /// Compute image- and pixel-level metrics from scored output
    Eval(EvalArgs),
    /// Feature distance versus synthetic anomaly area on one image
    Analyze(AnalyzeArgs),
    /// Apply one CutPaste corruption to an image
    Synth(SynthArgs),
    /// Print a checkpoint header
    Inspect(InspectArgs),
    /// Write the procedural texture dataset as an MVTec-style tree
    ToyData(ToyDataArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Dataset root containing one directory per category
    #[arg(long)]
    pub root: PathBuf,
    /// Directory convention of the dataset
    #[arg(long, default_value = "mvtec")]
    pub layout: Layout,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Normal images per category
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest JSON to write
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    /// Mean over every patch and channel
    ElementMean,
    /// Squared L2 norm per patch, averaged over patches
    PatchSum,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = DEFAULT_PROVIDER)]
    pub provider: ProviderSpec,
    /// Transformer blocks in the projector
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    /// Attention heads (default: dim / 64, at least 1)
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long, default_value_t = 4.0)]
    pub mlp_ratio: f64,
    /// Disable the learned positional table
    #[arg(long)]
    pub no_pos_embed: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Coupled L2 weight decay
    #[arg(long, default_value_t = 1e-4)]
    pub wd: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Probability of leaving a training image uncorrupted
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Side length images are resized to
    #[arg(long, default_value_t = 512)]
    pub image_size: usize,
    #[arg(long, value_enum, default_value_t = LossArg::ElementMean)]
    pub loss: LossArg,
    /// Seed for batch selection and synthesis
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Seed for projector initialization
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
    /// Rotate pasted patches by multiples of 90 degrees
    #[arg(long)]
    pub rotate: bool,
    /// Checkpoint to write
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log CSV (default: checkpoint path with a .log.csv extension)
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = DEFAULT_PROVIDER)]
    pub provider: ProviderSpec,
    /// Text file with one test image id per line (default: the whole test split)
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Patches averaged into the image score (default: 10 for mvtec, 6 for visa)
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long, default_value_t = 512)]
    pub image_size: usize,
    /// Gaussian smoothing sigma in pixels
    #[arg(long)]
    pub smooth: Option<f32>,
    /// Also write min-max normalized 16-bit PNG heatmaps
    #[arg(long)]
    pub png: bool,
    /// Output directory for scores.csv and heatmaps/
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// scores.csv written by `score`
    #[arg(long)]
    pub scores: PathBuf,
    /// Heatmap directory written by `score`
    #[arg(long)]
    pub heatmaps: PathBuf,
    /// Dataset root that the mask column is relative to
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub fpr_cap: f64,
    #[arg(long, default_value_t = 200)]
    pub pro_thresholds: usize,
    /// Output directory for metrics.csv and summary.json
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value = DEFAULT_PROVIDER)]
    pub provider: ProviderSpec,
    /// Comma-separated increasing area ratios (default: 0 then 20 steps over 0.005..0.15)
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub image_size: usize,
    /// CSV to write
    #[arg(long)]
    pub out: PathBuf,
    /// Optional scatter plot PNG
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Resize before corrupting (default: keep the native size)
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long, default_value_t = 0.02)]
    pub area_min: f64,
    #[arg(long, default_value_t = 0.15)]
    pub area_max: f64,
    #[arg(long)]
    pub rotate: bool,
    /// Output directory for synth.png, mask.png and geometry.json
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
}

#[derive(Debug, Args)]
pub struct ToyDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub categories: usize,
    #[arg(long, default_value_t = 5)]
    pub train: usize,
    #[arg(long, default_value_t = 20)]
    pub good: usize,
    #[arg(long, default_value_t = 20)]
    pub bad: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0.03)]
    pub noise: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
