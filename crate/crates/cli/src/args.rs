use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use flashgan::trainer::Ablation;

#[derive(Debug, Parser)]
#[command(name = "flashgan", version, about = "Flash-to-ambient image translation with attention-guided GANs")]
pub struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model (flags override the config file, which overrides defaults).
    Train(Box<TrainArgs>),
    /// Translate flash images with a trained checkpoint.
    Infer(InferArgs),
    /// Report PSNR/SSIM of a checkpoint on a manifest's test split.
    Eval(EvalArgs),
    /// Write the attention map of a flash/ambient pair as a grayscale PNG.
    Attn(AttnArgs),
    /// Generate a synthetic flash/ambient dataset with a manifest.
    Synth(SynthArgs),
}

/// One flag per run-configuration key.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with run-configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from this checkpoint until `epochs` are complete.
    #[arg(long)]
    pub resume: Option<PathBuf>,

    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr_generator: Option<f64>,
    #[arg(long)]
    pub lr_discriminator: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_epsilon: Option<f64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// DEFAULT, R_PLUS_A, R_ONLY or UNET_SCRATCH.
    #[arg(long)]
    pub ablation: Option<Ablation>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub weights_archive: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub allow_discriminator_lr_override: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub conditional_discriminator: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub unet_adversarial: Option<bool>,
    #[arg(long)]
    pub width_divisor: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Image files or directories of images.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the per-pair report.
    #[arg(long, default_value = "eval_report.tsv")]
    pub report: PathBuf,
    /// Row label in the printed table.
    #[arg(long, default_value = "Model")]
    pub method: String,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    pub flash: PathBuf,
    pub ambient: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 240)]
    pub height: usize,
    #[arg(long, default_value_t = 320)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub shadow_polygons: usize,
    #[arg(long, default_value_t = 1.8)]
    pub center_gain: f64,
    #[arg(long, default_value_t = 0.5)]
    pub edge_gain: f64,
    /// Disable the radial flash brightening.
    #[arg(long)]
    pub no_falloff: bool,
    #[arg(long, default_value_t = 0.01)]
    pub noise_level: f64,
    /// Fraction of pairs assigned to the test split.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}
