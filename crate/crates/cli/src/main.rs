//! `zigzag`: data generation, training, uncertainty sweeps, oracle checks,
//! calibration reports and the toy reproduction.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zigzag_core::{EstimatorForm, FeedbackMode};

#[derive(Debug, Parser)]
#[command(name = "zigzag", version, about = "Pairwise regressors with epistemic covariance estimates")]
struct Cli {
    /// TOML experiment configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic toy dataset (or the replicate surrogate splits).
    GenData(GenDataArgs),
    /// Train a pair model on a triplet CSV.
    Train(TrainArgs),
    /// Decompose the uncertainty of a trained model over a grid.
    Sweep(SweepArgs),
    /// Check the closed-form identities on random finite worlds.
    OracleVerify(OracleArgs),
    /// Quantile and variance calibration of a model on a dataset.
    Calibrate(CalibrateArgs),
    /// R^2 and mean |cov| on train and test splits, aggregated over seeds.
    ReportTable(ReportArgs),
    /// Generate, train on triplets and couples, sweep and plot the toy problem.
    ReproduceToy(ToyArgs),
}

#[derive(Debug, Args)]
struct DataOverrides {
    /// Number of triplets.
    #[arg(long)]
    n: Option<usize>,
    /// Noise amplitude of the toy problem.
    #[arg(long)]
    gamma: Option<f64>,
    /// Store y2 = y1.
    #[arg(long)]
    couples: bool,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    data: DataOverrides,
    #[arg(long)]
    seed: Option<u64>,
    /// Generate `<stem>_train.csv` and `<stem>_test.csv` from the replicate surrogate instead.
    #[arg(long)]
    surrogate: bool,
    /// Output CSV; metadata is written next to it as JSON.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    /// Exponent of the beta-NLL variance weight.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// `drop-weights` or `constant:<y0>`.
    #[arg(long, value_parser = config::parse_feedback_mode)]
    feedback_mode: Option<FeedbackMode>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Triplet CSV.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    train: TrainOverrides,
    #[arg(long)]
    seed: Option<u64>,
    /// Model bundle (JSON).
    #[arg(long, short)]
    out: PathBuf,
    /// Per-epoch loss CSV [default: next to the model, `.loss.csv`].
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimatorOverrides {
    /// Monte Carlo draws per input.
    #[arg(long)]
    samples: Option<usize>,
    /// `centered` or `paper`.
    #[arg(long)]
    form: Option<EstimatorForm>,
    /// Base seed of the estimator streams.
    #[arg(long)]
    estimator_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    hi: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// CSV of grid points with one column per feature (required for multi-feature models).
    #[arg(long)]
    grid_csv: Option<PathBuf>,
    /// Chebyshev levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    beta_levels: Option<Vec<f64>>,
    #[command(flatten)]
    estimator: EstimatorOverrides,
    #[arg(long, short)]
    out: PathBuf,
    /// SVG chart [default: next to the CSV]; single-feature models only.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    worlds: usize,
    #[arg(long, default_value_t = 10)]
    quadrature_worlds: usize,
    #[arg(long, default_value_t = 1024)]
    quadrature_nodes: usize,
    /// Add this offset to one suite's residuals (harness self-test).
    #[arg(long)]
    perturb: Option<f64>,
    #[arg(long, default_value = "zigzag")]
    perturb_suite: String,
    /// Also write the JSON verdict here.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Nominal levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    weak_bins: usize,
    /// Bins per axis of the strong (mean x variance) binning.
    #[arg(long, default_value_t = 5)]
    strong_bins: usize,
    /// Exit with status 1 when the largest coverage error exceeds this.
    #[arg(long)]
    max_coverage_error: Option<f64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Use the built-in replicate surrogate splits (one per seed).
    #[arg(long, conflicts_with_all = ["train_csv", "test_csv"])]
    surrogate: bool,
    #[arg(long = "train", value_name = "CSV")]
    train_csv: Option<PathBuf>,
    #[arg(long = "test", value_name = "CSV")]
    test_csv: Option<PathBuf>,
    /// Trained bundles to evaluate, one per run; without it a model is trained per seed.
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[command(flatten)]
    train: TrainOverrides,
    #[command(flatten)]
    estimator: EstimatorOverrides,
    /// Table CSV [default: stdout].
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ToyArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    train: TrainOverrides,
    #[command(flatten)]
    estimator: EstimatorOverrides,
    /// Output directory [default: `out_dir` from the config, else `toy_output`].
    #[arg(long, short)]
    out: Option<PathBuf>,
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    VerificationFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::VerificationFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
