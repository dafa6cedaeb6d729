//! `adstop`: fit, solve, optimize, compare and detect from the command line.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_state_range, parse_vector};

// Aliases keep clap from reading `Option<Vec<_>>` as a repeated flag: each of
// these is one comma-separated value.
type Floats = Vec<f64>;
type StateList = Vec<usize>;

#[derive(Debug, Parser)]
#[command(name = "adstop", version, about = "Opportunistic ad scheduling as a multiple-stopping POMDP")]
pub struct Cli {
    /// Master seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving output files (default `out`).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Allow dynamic programming on five or more states.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Where the model comes from, plus the stopping-problem parameters.
#[derive(Debug, Clone, Default, Args)]
pub struct ProblemArgs {
    /// Built-in parameter set: synthetic, youtube, twitch or buzz-change.
    #[arg(long, conflicts_with_all = ["model", "fit_input"])]
    pub experiment: Option<String>,
    /// Model JSON file.
    #[arg(long, conflicts_with = "fit_input")]
    pub model: Option<PathBuf>,
    /// Viewer-count CSV to fit a model from (BIC over 1..=6 states).
    #[arg(long)]
    pub fit_input: Option<PathBuf>,
    /// Stop reward per state, comma separated.
    #[arg(long, value_parser = parse_vector, conflicts_with = "alpha")]
    pub reward: Option<Floats>,
    /// Per-state click rate; the reward becomes `alpha_i g_i`.
    #[arg(long, value_parser = parse_vector)]
    pub alpha: Option<Floats>,
    /// Number of ads `L`.
    #[arg(long)]
    pub stops: Option<usize>,
    /// Discount factor.
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit Poisson HMMs to a viewer-count CSV and select the state count by BIC.
    Fit {
        /// CSV with a `viewers` column (or a single column).
        #[arg(long)]
        input: Option<PathBuf>,
        /// State counts to try: `1-6` or `2,3,5`.
        #[arg(long, value_parser = parse_state_range)]
        states: Option<StateList>,
        /// EM restarts per state count.
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Grid value iteration: solution table and stopping sets.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Grid resolution `M`.
        #[arg(long)]
        resolution: Option<usize>,
        /// Sup-norm convergence tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// SPSA search over linear threshold policies.
    Optimize {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        /// Rollouts per objective evaluation.
        #[arg(long)]
        batch: Option<usize>,
        /// Rollout horizon `N`.
        #[arg(long)]
        horizon: Option<usize>,
        /// Policy JSON with `phi`, used as the first restart's starting point.
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Paired Monte Carlo comparison against periodic and random schedules.
    Compare {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Linear policy JSON files.
        #[arg(long = "policy")]
        policies: Vec<PathBuf>,
        /// Include the grid dynamic-programming policy.
        #[arg(long)]
        dp: bool,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Grid resolution for `--dp`.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Single-stop change detection on an observation series.
    Detect {
        /// Two-state model JSON file.
        #[arg(long, conflicts_with = "experiment")]
        model: Option<PathBuf>,
        /// Built-in two-state parameter set (buzz-change).
        #[arg(long)]
        experiment: Option<String>,
        /// Observation CSV (`viewers` column or a single column).
        #[arg(long)]
        input: PathBuf,
        /// Stop reward per state.
        #[arg(long, value_parser = parse_vector)]
        reward: Option<Floats>,
        #[arg(long)]
        rho: Option<f64>,
        /// Quantize raw counts into this many symbols before filtering.
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Run a built-in experiment end to end.
    Experiment {
        /// synthetic, youtube, twitch or buzz-change.
        name: String,
        /// Rollouts per policy in the comparison.
        #[arg(long)]
        batch: Option<usize>,
        /// SPSA iterations (youtube, twitch).
        #[arg(long)]
        iterations: Option<usize>,
        /// SPSA restarts (youtube, twitch).
        #[arg(long)]
        restarts: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
