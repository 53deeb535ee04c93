use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "maffsrn",
    version,
    about = "Lightweight single-image super-resolution toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parameter count, multi-adds and peak activation memory of a network.
    Analyze(AnalyzeArgs),
    /// Modcrop and bicubic-downscale an HR image.
    Degrade(DegradeArgs),
    /// Super-resolve one image with a checkpoint.
    Sr(SrArgs),
    /// PSNR/SSIM on the Y channel over a directory of HR images.
    Eval(EvalArgs),
    /// Train a network on patches from a dataset.
    Train(TrainArgs),
    /// Compare backpropagated gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a freshly initialized (or all-zero) checkpoint.
    Init(InitArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Network config (JSON); defaults to MAFFSRN x2.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// HR resolution as WIDTHxHEIGHT.
    #[arg(long, default_value = "1280x720")]
    pub hr: String,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub scale: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SrArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub hr_dir: PathBuf,
    /// Must match the checkpoint; taken from it when omitted.
    #[arg(long)]
    pub scale: Option<usize>,
    /// Pixels cropped from each side before PSNR; defaults to the scale.
    #[arg(long)]
    pub border: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root containing HR/ and optionally LR_x{scale}/.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Run the built-in single-patch overfitting check instead.
    #[arg(long)]
    pub smoke: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 48)]
    pub patch: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr0: f64,
    #[arg(long, default_value_t = 200)]
    pub halve_every: usize,
    /// adam or adamp.
    #[arg(long, default_value = "adamp")]
    pub optimizer: String,
    /// l1 or l2.
    #[arg(long, default_value = "l1")]
    pub loss: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub iters_per_epoch: Option<usize>,
    /// Where the loss curve and checkpoints go.
    #[arg(long, default_value = "train_out")]
    pub out_dir: PathBuf,
    /// Write a checkpoint every K epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// HR images scored after every epoch; the best one is kept as best.mafw.
    #[arg(long)]
    pub val_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Network config (JSON); defaults to a tiny network.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 9)]
    pub input_size: usize,
    #[arg(long)]
    pub zero_input: bool,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Zero every convolution weight and bias.
    #[arg(long)]
    pub zero: bool,
    #[arg(long)]
    pub output: PathBuf,
}
