use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "downside", version, about = "Long-run downside risk: ergodic HJB, rate function and Monte Carlo checks")]
pub struct Cli {
    /// Worker threads for per-gamma and per-path work (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Repeat for more diagnostics on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Directory for outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the standing assumptions of a model and fit their constants.
    Check(CheckArgs),
    /// Compute the risk-sensitive value curve chi(gamma) and its derivative.
    Chi(ChiArgs),
    /// Legendre transform of a chi curve into the rate function.
    Rate(RateArgs),
    /// Simulate wealth paths and regress log downside probabilities on T.
    Simulate(SimulateArgs),
    /// Run the oracle self-checks and the acceptance suite.
    Validate(ValidateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Check(_) => "check",
            Command::Chi(_) => "chi",
            Command::Rate(_) => "rate",
            Command::Simulate(_) => "simulate",
            Command::Validate(_) => "validate",
        }
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Model description (JSON).
    pub model: PathBuf,
    /// Half-width of the sampling cube.
    #[arg(long = "box", default_value_t = 6.0)]
    pub half_width: f64,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "check.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Half-width of the computational box (default from the fitted growth constants).
    #[arg(long)]
    pub grid_l: Option<f64>,
    /// Nodes per axis.
    #[arg(long, default_value_t = 201)]
    pub grid_n: usize,
}

#[derive(Debug, Args)]
pub struct ChiArgs {
    pub model: PathBuf,
    #[arg(long, default_value_t = -4.0, allow_hyphen_values = true)]
    pub gamma_min: f64,
    #[arg(long, default_value_t = -0.02, allow_hyphen_values = true)]
    pub gamma_max: f64,
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value = "chi.csv")]
    pub out: PathBuf,
    /// Use the closed form (constant coefficients or the one-factor linear-Gaussian model).
    #[arg(long)]
    pub force_oracle: bool,
    /// Differentiate chi by finite differences instead of the Poisson equation.
    #[arg(long)]
    pub fd_derivative: bool,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[arg(long)]
    pub chi: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub kappa_min: f64,
    /// Defaults to chi'(gamma_max).
    #[arg(long, allow_hyphen_values = true)]
    pub kappa_max: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    /// Explicit kappa values, comma separated; overrides the range.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub kappa: Vec<f64>,
    #[arg(long, default_value = "rate.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyKind {
    Zero,
    Constant,
    Stationary,
    Finite,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyKind::Stationary)]
    pub strategy: StrategyKind,
    /// Portfolio weights for the constant strategy, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub h: Vec<f64>,
    /// Risk sensitivity of the feedback; resolved from --rate or a computed curve if absent.
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub kappa: f64,
    #[arg(long = "T", value_delimiter = ',', default_values_t = vec![25.0, 50.0, 100.0])]
    pub horizons: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Sample under the tilted measure and reweight.
    #[arg(long)]
    pub tilted: bool,
    /// Rate table supplying gamma(kappa) and the reference slope J(kappa).
    #[arg(long)]
    pub rate: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value = "sim.csv")]
    pub out: PathBuf,
    #[arg(long, default_value = "slope.csv")]
    pub slope_out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteKind {
    Fast,
    Full,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, value_enum, default_value_t = SuiteKind::Fast)]
    pub suite: SuiteKind,
    /// Directory holding merton.json and lgq.json.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Corrupts an oracle constant to exercise the self-checks.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}
