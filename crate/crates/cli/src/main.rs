mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anomalyzer_core::anomalyzer::MODEL_FORMAT_VERSION;
use anomalyzer_core::baselines::{BaselineKind, BASELINE_FORMAT_VERSION};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Grid-cell anomaly detection for full-disk solar images.
#[derive(Debug, Parser)]
#[command(name = "anomalyzer", disable_version_flag = true)]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to the number of CPUs). Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print tool and file-format versions.
    #[arg(short = 'V', long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic image set with a manifest.
    Synth(SynthArgs),
    /// Fit a model on a labeled manifest.
    Train(TrainArgs),
    /// Score one image. Exit status: 0 normal, 1 anomalous, 2 error.
    Score(ScoreArgs),
    /// Evaluate a model on a labeled manifest.
    Evaluate(EvaluateArgs),
    /// Class-imbalance sweep producing balanced-accuracy curves.
    Sweep(SweepArgs),
    /// Train or evaluate the SVM baselines.
    #[command(subcommand)]
    Baseline(BaselineCommand),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Generator settings as JSON; defaults are used when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0.5)]
    anomaly_fraction: f64,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the frame size in the spec file.
    #[arg(long)]
    size: Option<usize>,
    /// First index used in file names.
    #[arg(long, default_value_t = 0)]
    start_index: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Cells per side [default: 16]
    #[arg(long)]
    grid: Option<usize>,
    /// Likelihood threshold [default: 0.7]
    #[arg(long)]
    theta: Option<f64>,
    /// Flagged cells needed for an anomalous verdict [default: 4]
    #[arg(long)]
    min_cells: Option<usize>,
    /// Split seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Images are resampled to this square side [default: 512]
    #[arg(long)]
    canonical_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Write the split (JSON and per-split manifests) here.
    #[arg(long)]
    split_dir: Option<PathBuf>,
    /// Fit on every image instead of the training split.
    #[arg(long, conflicts_with = "tune")]
    train_all: bool,
    /// Choose theta and min-cells by validation F1 instead of using the flags.
    #[arg(long)]
    tune: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Write a heatmap overlay PNG (and a JSON sidecar next to it).
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for metrics.csv and verdicts.csv.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    /// Additional baseline detectors to include.
    #[arg(long = "baseline")]
    baselines: Vec<PathBuf>,
    /// Base test manifest; all of its anomalies are used at every ratio.
    #[arg(long)]
    manifest: PathBuf,
    /// Manifest of extra normal images used to reach higher ratios.
    #[arg(long)]
    extra_normals: Option<PathBuf>,
    /// `1..5`, `1,2,3` or a single ratio [default: 1..5]
    #[arg(long)]
    ratios: Option<String>,
    /// Curve CSV (detector, ratio, balanced_accuracy).
    #[arg(long)]
    out: PathBuf,
    /// Also write the full metrics table here.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Svm,
    Ocsvm,
}

impl From<KindArg> for BaselineKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Svm => BaselineKind::Svm,
            KindArg::Ocsvm => BaselineKind::Ocsvm,
        }
    }
}

#[derive(Debug, Subcommand)]
enum BaselineCommand {
    /// Grid-search hyperparameters on the validation split and save the best model.
    Train(BaselineTrainArgs),
    /// Evaluate a saved baseline on a labeled manifest.
    Evaluate(BaselineEvaluateArgs),
}

#[derive(Debug, Args)]
struct BaselineTrainArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    manifest: PathBuf,
    /// Hyperparameter grid as JSON; the default grid for the kind otherwise.
    #[arg(long)]
    grid_search: Option<PathBuf>,
    /// Split seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Feature grid side [default: 32]
    #[arg(long)]
    feature_grid: Option<usize>,
    /// [default: 512]
    #[arg(long)]
    canonical_size: Option<usize>,
    /// SMO stopping tolerance [default: 0.001]
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Per-configuration validation results as CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BaselineEvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// [default: 512]
    #[arg(long)]
    canonical_size: Option<usize>,
    #[arg(long)]
    report: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.version {
        println!("anomalyzer {}", env!("CARGO_PKG_VERSION"));
        println!("model format {MODEL_FORMAT_VERSION}");
        println!("baseline format {BASELINE_FORMAT_VERSION}");
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: no subcommand given; see --help");
        return ExitCode::from(2);
    };
    match commands::run(cli.config.as_deref(), cli.jobs, command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
