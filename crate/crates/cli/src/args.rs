use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ccnet", version, about = "Dense audio-visual event localization on synthetic data")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Toy,
    Full,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Base profile applied before the config file.
    #[arg(long, global = true, value_enum, default_value = "toy")]
    pub profile: ProfileArg,
    /// key=value config file layered over the profile.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable, applied in order after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for generation, initialization and shuffling; beats CCNET_SEED and --set.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-video generation and inference.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with train/ and test/ splits.
    Gen {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus an epoch log.
    Train {
        /// Dataset root (uses its train/ split) or a split directory.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for model.ccn, train.log and config.txt.
        #[arg(long)]
        out: PathBuf,
        /// Continue from out/model.ccn if it exists.
        #[arg(long)]
        resume: bool,
        /// Total epochs; shorthand for --set train.epochs=N.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Localize events on a split and write report.txt and predictions.tsv.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long, required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Dataset root or split directory.
        #[arg(long)]
        data: PathBuf,
        /// Split used when --data is a dataset root.
        #[arg(long, default_value = "test")]
        split: String,
        /// Score this prediction file instead of running a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write predictions.tsv for a split without scoring.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every cell of a flag grid and merge the results.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated axes from cmi, tcg, c2f, f2c, order, granularity.
        #[arg(long, default_value = "cmi,tcg,c2f,f2c,order")]
        axes: String,
    },
    /// Export per-timestep gate values of one video as CSV.
    Gates {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Video id as listed in the manifest.
        #[arg(long)]
        video: String,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}
