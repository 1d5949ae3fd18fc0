//! Command-line surface. Values are kept as raw strings here and parsed
//! after merging with the config file, so both sources share one parser.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "odeflow",
    version,
    about = "Loss landscapes and optimizer comparisons for the linear neural ODE"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate the closed-form loss over a grid of rates.
    Landscape(LandscapeArgs),
    /// Run one training job.
    Train(TrainArgs),
    /// Run every (method, initial rate) pair on one shared dataset.
    Compare(CompareArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Landscape(_) => "landscape",
            Command::Train(_) => "train",
            Command::Compare(_) => "compare",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Random seed for the synthetic dataset.
    #[arg(long, allow_hyphen_values = true)]
    pub seed: Option<String>,
    /// Flat `key = value` file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LandscapeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// True rate(s), comma separated [default: -1]
    #[arg(long = "a-star", allow_hyphen_values = true)]
    pub a_star: Option<String>,
    /// Terminal time(s), comma separated [default: 1]
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<String>,
    /// Initial-state variance [default: 1]
    #[arg(long, allow_hyphen_values = true)]
    pub sigma2: Option<String>,
    /// Rate interval as A:B [default: -3:1]
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<String>,
    /// Grid points per (a*, t) group [default: 201]
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<String>,
}

/// Problem and optimizer settings shared by `train` and `compare`.
#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// True rate [default: -1]
    #[arg(long = "a-star", allow_hyphen_values = true)]
    pub a_star: Option<String>,
    /// Terminal time [default: 1]
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<String>,
    /// Initial-state variance [default: 1]
    #[arg(long, allow_hyphen_values = true)]
    pub sigma2: Option<String>,
    /// Learning rate [default: 0.05]
    #[arg(long, allow_hyphen_values = true)]
    pub eta: Option<String>,
    /// Maximum number of epochs [default: 200]
    #[arg(long, allow_hyphen_values = true)]
    pub epochs: Option<String>,
    /// Dataset size [default: 10000]
    #[arg(long, allow_hyphen_values = true)]
    pub samples: Option<String>,
    /// Integrator step size [default: 0.01]
    #[arg(long, allow_hyphen_values = true)]
    pub h: Option<String>,
    /// Integrator, rk4 or euler [default: rk4]
    #[arg(long, allow_hyphen_values = true)]
    pub integrator: Option<String>,
    /// Stop once the mean loss falls below this [default: 1e-12]
    #[arg(long = "convergence-loss", allow_hyphen_values = true)]
    pub convergence_loss: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// sgd, adam, natgrad or fisher-natgrad [default: natgrad]
    #[arg(long, allow_hyphen_values = true)]
    pub method: Option<String>,
    /// Initial rate [default: 0]
    #[arg(long, allow_hyphen_values = true)]
    pub a0: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Methods, comma separated [default: sgd,adam,natgrad]
    #[arg(long, allow_hyphen_values = true)]
    pub methods: Option<String>,
    /// Initial rates, comma separated [default: -3,-2,0,1,2]
    #[arg(long, allow_hyphen_values = true)]
    pub inits: Option<String>,
}
