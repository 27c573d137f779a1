//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fqln::corruption::CorruptionKind;
use fqln::train::Bias;

use crate::data_spec::DataSpec;

#[derive(Parser, Debug, Clone)]
#[command(
    name = "fqln",
    version,
    about = "Frequency-biased robustness toolkit",
    args_override_self = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Seed for training, corruption sampling and evaluation streams
    /// (default 0; for `train`, overrides a seed in the configuration).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory that receives every output file.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    /// synth:<n>,<size>,<classes>[,<seed>] or idx:<images>,<labels>.
    #[arg(long, global = true, default_value = "synth:12000,32,10,0")]
    pub data: DataSpec,

    /// Trailing images of --data held out for validation and evaluation
    /// (0 evaluates on the whole set).
    #[arg(long, global = true, default_value_t = 2000)]
    pub val_size: usize,

    /// `tinycnn` or a file holding an architecture description.
    #[arg(long, global = true, default_value = "tinycnn")]
    pub arch: String,

    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = "FQLN_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Write corrupted copies of the first images as PGM/PPM.
    Corrupt {
        #[arg(long)]
        kind: CorruptionKind,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=5))]
        severity: u8,
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Print the full severity parameter table to stdout.
        #[arg(long)]
        print_params: bool,
    },
    /// Mean Fourier magnitude of corruption differences (CSV + 16-bit PGM).
    Spectrum {
        #[arg(long)]
        kind: CorruptionKind,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=5))]
        severity: u8,
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Output file stem inside --out-dir.
        #[arg(long, default_value = "spectrum")]
        out: String,
    },
    /// Order corruption kinds by mean high-frequency energy fraction.
    Order {
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<CorruptionKind>,
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// High-pass radius in frequency bins (default: a quarter of the image height).
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Continue training a checkpoint with HF or LF augmentation.
    Finetune {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        bias: Bias,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Replace BN statistics with those of (optionally corrupted) evaluation data.
    AdaptBn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        kind: Option<CorruptionKind>,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=5))]
        severity: u8,
    },
    /// Clean and corruption error of one checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Evaluate the softmax average of an HF and an LF expert.
    Rohl {
        #[arg(long)]
        hf: PathBuf,
        #[arg(long)]
        lf: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Compare two reports; exits 1 when they differ beyond --tol.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Tolerance in percentage points.
        #[arg(long, default_value_t = 0.0)]
        tol: f64,
    },
    /// Train, fine-tune, combine and evaluate the full experiment grid.
    Repro(ReproArgs),
    /// Re-run the command recorded in a manifest.
    Rerun { manifest: PathBuf },
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// key=value training configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Configuration override, `key=value`; repeatable and applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Corruption kinds (default: all).
    #[arg(long, value_delimiter = ',')]
    pub kinds: Vec<CorruptionKind>,
    /// Add uCE normalized by --reference-report.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub reference_report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ReproArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 4)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = fqln::tv::DEFAULT_LAMBDA)]
    pub tv_lambda: f64,
    #[arg(long, default_value_t = 1)]
    pub finetune_epochs: usize,
    #[arg(long, default_value_t = 0.003)]
    pub finetune_lr: f64,
    /// Also train TV models tapped at the second convolution.
    #[arg(long)]
    pub layer_ablation: bool,
}

impl GlobalArgs {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
