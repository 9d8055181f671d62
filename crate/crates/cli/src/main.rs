use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

const CONFIG_SUMMARY: &str = "\
Config file (JSON, every key optional):
  master_seed            64-bit seed all per-item seeds derive from
  runs_dir               parent directory of `run` outputs
  sources                [{class_label, height_m, frames_dir | video}]
  ingest                 decoder_cmd, sample_every, top_k
  segmentation           threshold_mode, fixed_threshold, min_area_px, max_area_px, padding_px, invert
  augmentation           brightness_delta, rotation_deg, scale ([lo, hi]) and p_* probabilities
  synthesis              images_per_class, height_weights, seeds_per_image, max_overlap_iou,
                         classes, pools_dir, canvases_dir, test_images_per_class
  split                  train_fraction, seed
  training               nodes_per_layer, layer_widths, learning_rate, decay, dropout,
                         batch_size, optimizer, epochs, init_seed, features, standardize
  ensemble               inputs, weights
Command-line flags override the matching config keys.

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.";

#[derive(Debug, Parser)]
#[command(name = "seedkit", version, about = "Domain-randomized synthetic seed datasets and baseline classification", after_help = CONFIG_SUMMARY)]
pub struct Cli {
    /// Worker threads for synthesis and inference; outputs do not depend on it.
    #[arg(long, global = true, env = "SEEDKIT_JOBS", default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArg {
    /// Global JSON config; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ThresholdArg {
    Otsu,
    Fixed,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode a video (or read a frame directory) and keep the sharpest frames.
    Ingest(IngestArgs),
    /// Segment seed blobs from frames into a cutout pool.
    Extract(ExtractArgs),
    /// Write augmented variants of pool cutouts for inspection.
    AugmentPreview(AugmentPreviewArgs),
    /// Compose synthetic scenes from cutout pools and write a manifest.
    Synth(SynthArgs),
    /// Assign a stratified train/val split to a manifest.
    Split(SplitArgs),
    /// Train the baseline classifier head.
    TrainBaseline(TrainArgs),
    /// Write softmax outputs of a trained model for one split.
    Predict(PredictArgs),
    /// Sum softmax files from several models.
    Ensemble(EnsembleArgs),
    /// Confusion matrix and per-class metrics for a softmax file.
    Eval(EvalArgs),
    /// Run every stage end to end into a fresh run directory.
    Run(RunArgs),
    /// Write synthetic lightbox frames and canvases for trying the toolkit.
    #[command(hide = true)]
    MakeFixtures(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Video file to decode with the decoder command.
    #[arg(long, conflicts_with = "frames", required_unless_present = "frames")]
    pub video: Option<PathBuf>,
    /// Directory of already-decoded PNG frames.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Decoder command template with {input} and {output_pattern} placeholders.
    #[arg(long)]
    pub decoder_cmd: Option<String>,
    /// Keep every n-th decoded frame.
    #[arg(long)]
    pub every: Option<usize>,
    /// Number of sharpest frames to keep.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Capture height in metres recorded on the frames.
    #[arg(long)]
    pub height: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Directory of PNG frames.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long = "class")]
    pub class_label: String,
    /// Capture height: 0.3, 0.5 or 0.7.
    #[arg(long)]
    pub height: f64,
    #[arg(long)]
    pub threshold: Option<ThresholdArg>,
    #[arg(long)]
    pub fixed_threshold: Option<u8>,
    #[arg(long)]
    pub min_area: Option<u64>,
    #[arg(long)]
    pub max_area: Option<u64>,
    #[arg(long)]
    pub padding: Option<u32>,
    /// Treat pixels brighter than the threshold as foreground.
    #[arg(long)]
    pub light_foreground: bool,
    /// Output pool directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentPreviewArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Pool directory (searched recursively for index files).
    #[arg(long)]
    pub pool: PathBuf,
    /// Variants per cutout.
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    /// Only the first n cutouts.
    #[arg(long, default_value_t = 8)]
    pub limit: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Root of cutout pools.
    #[arg(long)]
    pub pools: Option<PathBuf>,
    /// Directory of canvas PNGs; generated lightbox canvases when absent.
    #[arg(long)]
    pub canvases: Option<PathBuf>,
    #[arg(long)]
    pub images_per_class: Option<usize>,
    #[arg(long)]
    pub test_images_per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset directory; receives the images and manifest.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fraction of each class assigned to train.
    #[arg(long = "train")]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output manifest; may equal the input.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Global config (its `training` section is used) or a bare head config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Image root; defaults to the manifest's directory.
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Start from a reference hyperparameter row: vgg16, vgg19 or resnet101.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub nodes: Option<usize>,
    /// grid, sorted_grid or luma_quantiles.
    #[arg(long)]
    pub features: Option<String>,
    /// Accepted for scripting; training is always sequential and bit-reproducible.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// One positive weight per input.
    #[arg(long, num_args = 1..)]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Report CSV path; the text table goes to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `runs_dir`.
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Accepted for scripting; training is always sequential and bit-reproducible.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Class labels; the five built-in classes when absent.
    #[arg(long = "class", num_args = 1..)]
    pub classes: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_chain(&e.error));
            ExitCode::from(e.code)
        }
    }
}

/// Joins the error chain, dropping causes whose text the message already contains.
fn render_chain(error: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}
