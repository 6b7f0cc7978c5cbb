mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use curvegp::config::ExperimentConfig;
use curvegp::Error;

#[derive(Debug, Parser)]
#[command(name = "curvegp", version, about = "Gaussian-process models of closed planar curves")]
pub struct Cli {
    /// Configuration file of `section.key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one configuration key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true, env = "CURVEGP_OUTPUT_DIR", value_name = "DIR")]
    pub output_dir: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeKind {
    Circle,
    Ellipse,
    Star,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LandmarkMethod {
    Simultaneous,
    Sequential,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = ShapeKind::Circle)]
    pub shape: ShapeKind,
    /// Number of sample points.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Standard deviation of the coordinate noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Circle or star radius.
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Ellipse semi-axis along x.
    #[arg(long, default_value_t = 2.0)]
    pub a: f64,
    /// Ellipse semi-axis along y.
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    /// Relative petal amplitude of a star.
    #[arg(long, default_value_t = 0.3)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 5)]
    pub petals: u32,
    /// Angular width of a sampling cluster; equal spacing when absent.
    #[arg(long)]
    pub cluster_width: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub cluster_start: f64,
    /// Share of the points inside the cluster window.
    #[arg(long, default_value_t = 1.0)]
    pub cluster_fraction: f64,
    /// Output CSV (default `simulated.csv` in the output directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Curve files (CSV or JSON collection); defaults to `input.paths`.
    pub inputs: Vec<PathBuf>,
    /// Comma-separated class label per curve.
    #[arg(long)]
    pub labels: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic curve.
    Simulate(SimulateArgs),
    /// Center, scale and align a collection of curves.
    Preprocess {
        #[command(flatten)]
        input: InputArgs,
        /// Index of the template curve for alignment.
        #[arg(long)]
        template: Option<usize>,
    },
    /// Fit the multi-output model and store its hyperparameters.
    Fit {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict every curve of a stored fit on a regular grid.
    Predict {
        /// Fit record written by `fit` (default `fit.json` in the output directory).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Fit and predict in one step, optionally parameterizing partial
    /// observations against a reference curve.
    Reconstruct {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Select landmark points on densely sampled curves.
    Landmarks {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value_t = LandmarkMethod::Simultaneous)]
        method: LandmarkMethod,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Elastic registration of one curve onto another.
    Register { source: PathBuf, target: PathBuf },
    /// Distances between curves or quality of predictions.
    Metrics {
        /// Two curves to compare (IMSPE, ESD and 2-Wasserstein).
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        pair: Option<Vec<PathBuf>>,
        /// Predictions file written by `predict` or `reconstruct`.
        #[arg(long, conflicts_with = "pair")]
        prediction: Option<PathBuf>,
        /// True curve for the IMSPE of predictions.
        #[arg(long, requires = "prediction")]
        truth: Option<PathBuf>,
    },
    /// Draw predictions with uncertainty ellipses as SVG.
    Plot {
        prediction: PathBuf,
        #[arg(long)]
        observed: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Only this curve index.
        #[arg(long)]
        curve: Option<usize>,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigAction {
    /// Print every key with its default value and description.
    PrintDefaults,
    /// Print the configuration after applying files, overrides and flags.
    Show,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidCurve(_) => "invalid-curve",
        Error::DegenerateCurve(_) => "degenerate-curve",
        Error::InvalidHyperparameters(_) => "invalid-hyperparameters",
        Error::InvalidArgument(_) => "invalid-argument",
        Error::Dimension(_) => "dimension-mismatch",
        Error::Validation(_) => "validation",
        Error::Numerical(_) => "numerical",
        Error::Parse { .. } => "parse",
        Error::Io { .. } => "io",
    }
}

fn main() -> ExitCode {
    let help = format!("Configuration keys and defaults:\n\n{}", ExperimentConfig::default().render());
    let matches = Cli::command().after_long_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({
                "error": error_kind(&e),
                "message": e.to_string(),
            });
            eprintln!("{report}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
