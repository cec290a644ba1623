//! `steglab`: dataset preparation, embedding, training, evaluation,
//! feature extraction and fusion.

mod commands;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "steglab", version, about = "JPEG steganalysis laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic grayscale textures as PGM files.
    Synth(SynthArgs),
    /// Resize and JPEG-compress PGM images into coefficient containers.
    Prepare(PrepareArgs),
    /// Embed a payload into every cover and write a pairing manifest.
    Embed(EmbedArgs),
    /// Train a detector and write its checkpoints and loss log.
    Train(TrainArgs),
    /// Detection error of checkpoints and of their averaged ensemble.
    Eval(EvalArgs),
    /// Extract CNN and/or Gabor-residual features for one split.
    Features(FeaturesArgs),
    /// Train the fused classifier and optionally score a test set.
    Fuse(FuseArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct PrepareArgs {
    /// Directory of `.pgm` files.
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 75)]
    pub quality_factor: u32,
}

#[derive(Args)]
pub struct EmbedArgs {
    /// Directory of cover `.stgc` files.
    #[arg(long)]
    pub covers: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    pub payload_bpnzac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of pairs assigned to the validation split.
    #[arg(long, default_value_t = 0.25)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    pub test_fraction: f64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Pairing manifest written by `embed`.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// 0 for the proposed network, 1..5 for the ablation variants.
    #[arg(long, default_value_t = 0)]
    pub variant: u8,
    #[arg(long, default_value_t = 8.0)]
    pub tlu_threshold: f32,
    /// Iterations; the step-decay and checkpoint intervals scale with it.
    #[arg(long, default_value_t = 120_000)]
    pub iters: u64,
    #[arg(long, default_value_t = 16)]
    pub batch_pairs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr0: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Learning-rate multiplier for the DCT kernels.
    #[arg(long, default_value_t = 0.01)]
    pub dct_lr_scale: f64,
    /// Keep the running batch-norm averages in checkpoints instead of
    /// recomputing them over the training pairs.
    #[arg(long)]
    pub no_bn_recalibration: bool,
    /// Overrides the scaled checkpoint interval.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: String,
    #[arg(long, num_args = 1.., required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8.0)]
    pub tlu_threshold: f32,
}

#[derive(Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    /// One `cnn_<j>.stgf` table per checkpoint, in the order given.
    #[arg(long, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, default_value_t = 8.0)]
    pub tlu_threshold: f32,
    /// Also write `gfr.stgf`.
    #[arg(long)]
    pub gfr: bool,
    /// Weight the Gabor residuals by the embedding change probabilities
    /// of `--payload-bpnzac`.
    #[arg(long, requires = "payload_bpnzac")]
    pub sca: bool,
    #[arg(long)]
    pub payload_bpnzac: Option<f64>,
    /// Residual quantization step; defaults to a quarter of the quantization
    /// table median.
    #[arg(long)]
    pub gfr_q: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub truncation: u32,
}

#[derive(Args)]
pub struct FuseArgs {
    /// Feature directory of the training split.
    #[arg(long)]
    pub train: PathBuf,
    /// Feature directory to score.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub models: usize,
    #[arg(long, default_value_t = 6)]
    pub classifiers: usize,
    #[arg(long, default_value_t = 51)]
    pub learners: usize,
    #[arg(long)]
    pub d_sub: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Prepare(a) => commands::prepare(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Features(a) => commands::features(&a),
        Command::Fuse(a) => commands::fuse(&a),
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
