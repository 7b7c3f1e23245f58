//! `ddm`: generate manifold samples, fit Diffusion Maps, extend them with
//! Nyström, train and apply Deep Diffusion Maps networks, and compare
//! embeddings.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical error,
//! 4 convergence failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddm_core::ErrorClass;

mod commands;
mod config;

use config::DimSetting;

#[derive(Debug, Parser)]
#[command(name = "ddm", version, about = "Diffusion Maps and Deep Diffusion Maps experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic manifold into a CSV file with a label column.
    Generate(GenerateArgs),
    /// Fit Diffusion Maps and save the model, training embedding and likelihood curve.
    Fit(FitArgs),
    /// Embed new points with the Nyström extension of a saved model.
    Extend(ExtendArgs),
    /// Train a network on the Gram target of a saved model.
    Train(TrainArgs),
    /// Embed points with a trained network.
    Predict(PredictArgs),
    /// Compare a test embedding against a reference embedding.
    Evaluate(EvaluateArgs),
    /// Run the whole split/fit/extend/train/evaluate pipeline on a synthetic manifold.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// swiss-roll, s-curve or helix.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Column holding labels; defaults to `label` when the header has one.
    #[arg(long)]
    label_column: Option<String>,
}

#[derive(Debug, Args)]
struct KernelFlags {
    /// Bandwidth as a quantile of the pairwise distances.
    #[arg(long)]
    q: Option<f64>,
    /// Bandwidth given directly.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Diffusion time.
    #[arg(long)]
    t: Option<u32>,
    /// Embedding dimension, or `auto` for the likelihood curve.
    #[arg(long)]
    d: Option<DimSetting>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    input: DataArgs,
    #[command(flatten)]
    kernel: KernelFlags,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file; the embedding, likelihood curve and resolved config are
    /// written next to it.
    #[arg(long)]
    model: PathBuf,
    /// Exit with status 3 when the graph raises a conditioning warning.
    #[arg(long)]
    strict_warnings: bool,
}

#[derive(Debug, Args)]
struct ExtendArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainFlags {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Output dimension; defaults to the model's `d`.
    #[arg(long)]
    output_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    train_seed: Option<u64>,
    /// Fixed loss multiplier; by default the loss is normalized by the mean
    /// squared target entry.
    #[arg(long)]
    loss_scale: Option<f64>,
    /// Feed raw coordinates to the network instead of standardized ones.
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network file; the training report and resolved config are written
    /// next to it.
    #[arg(long)]
    net: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    net: PathBuf,
    #[command(flatten)]
    input: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateFlags {
    #[arg(long)]
    confidence: Option<f64>,
    #[arg(long)]
    resamples: Option<usize>,
    /// Seed of the bootstrap.
    #[arg(long)]
    bootstrap_seed: Option<u64>,
    /// Skip pairs whose reference distance is zero instead of failing.
    #[arg(long)]
    exclude_zero: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[command(flatten)]
    eval: EvaluateFlags,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Key-value report; the decile table and resolved config are written
    /// next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    /// swiss-roll, s-curve or helix.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    workdir: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    /// Size of the training half.
    #[arg(long)]
    n_a: Option<usize>,
    /// Seeds the sample, the split and the bootstrap.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    kernel: KernelFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    eval: EvaluateFlags,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strict_warnings: bool,
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Data,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Numerical,
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.class {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
            ErrorClass::Convergence => 4,
        }
    }
}

impl From<ddm_core::Error> for CliError {
    fn from(e: ddm_core::Error) -> Self {
        Self {
            class: e.class(),
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version go to stdout and are not failures
            let failed = e.use_stderr();
            let _ = e.print();
            return if failed { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Extend(a) => commands::extend(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Reproduce(a) => commands::reproduce(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code())
        }
    }
}
