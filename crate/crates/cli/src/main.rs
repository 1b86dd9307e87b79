//! `riskctmc`: solvers and Monte Carlo checks for risk-sensitive control of
//! finite continuous-time Markov decision processes.
//!
//! Every command writes one JSON document that embeds the parsed
//! configuration and the argument vector. Exit codes: 0 success,
//! 1 validation error, 2 numerical failure, 3 crosscheck failure, 64 usage.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_CROSSCHECK: u8 = 3;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser, Serialize)]
#[command(name = "riskctmc", version, about, max_term_width = 100)]
pub struct Cli {
    /// Write the output document here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Load a model and print its diagnostics.
    Validate { model: PathBuf },
    /// Finite-horizon value and Markov policy (RK4, optionally Picard).
    SolveFinite(FiniteArgs),
    /// Discounted value by the ε-halving study.
    SolveDiscounted(DiscountedArgs),
    /// Optimal average growth rate by policy iteration.
    SolveAverage(AverageArgs),
    /// Optimal average growth rate by enumerating all stationary policies.
    BruteForce(BruteForceArgs),
    /// Sample one trajectory.
    Simulate(SimulateArgs),
    /// Monte Carlo estimate of one exponential cost functional.
    Estimate(EstimateArgs),
    /// Evaluate or search an exponential drift certificate.
    CheckLyapunov(LyapunovArgs),
    /// Solver against Monte Carlo (and enumeration), with a pass/fail verdict.
    Crosscheck(CrosscheckArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArg {
    /// Model document (JSON).
    pub model: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FiniteArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Risk parameter θ in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    /// Horizon T.
    #[arg(short = 'T', long = "horizon", default_value_t = 1.0)]
    pub horizon: f64,
    /// Number of time steps K.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Also run the Picard iteration and report the gap to RK4.
    #[arg(long)]
    pub picard: bool,
    /// Emit every k-th grid row (the last row is always included).
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DiscountedArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Discount rate α > 0.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Strictly decreasing ε sequence for the halving study.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-2, 5e-3, 2.5e-3])]
    pub eps: Vec<f64>,
    /// Upper end of the θ grid, below 1.
    #[arg(long, default_value_t = 0.9)]
    pub theta_max: f64,
    /// Number of θ steps L.
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    /// θ row reported as the discounted value (default: first row with θ ≥ 100 ε).
    #[arg(long)]
    pub probe: Option<f64>,
    /// Emit every k-th grid row (the last row is always included).
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AverageArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    /// Initial policy as comma-separated action labels (default: first action everywhere).
    #[arg(long, value_delimiter = ',')]
    pub initial: Option<Vec<String>>,
    /// Drift certificate (JSON) whose θ‖c‖ < δ hypothesis is checked.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BruteForceArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Stationary policy as comma-separated action labels (default: first action everywhere).
    #[arg(long, value_delimiter = ',')]
    pub policy: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    /// End time; ignored with --hit-zero.
    #[arg(long, default_value_t = 10.0)]
    pub t_end: f64,
    /// Stop at the first entrance to state 0 instead of at --t-end.
    #[arg(long)]
    pub hit_zero: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Functional {
    /// E exp(θ(∫₀ᵀ c + g(X_T))).
    Finite,
    /// E exp(θ ∫₀^∞ e^{−αt} c).
    Discounted,
    /// (θT)⁻¹ log E exp(θ ∫₀ᵀ c).
    Growth,
    /// E exp(η τ₀).
    Hitting,
    /// E exp(θ ∫₀^{τ₀} (c − ρ)).
    Poisson,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    pub functional: Functional,
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Horizon T (finite default 1; growth default 100 / smallest positive rate).
    #[arg(short = 'T', long = "horizon")]
    pub horizon: Option<f64>,
    /// Stationary policy as action labels; default: the solver's optimal control.
    #[arg(long, value_delimiter = ',')]
    pub policy: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    /// Number of trajectories N.
    #[arg(short = 'N', long = "samples", default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Solver grid size used when the policy comes from a solver.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Discounted: simulate the ε-boundary problem exactly instead of truncating.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Discounted: truncation time (default: the smallest meeting --max-bias).
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Discounted: allowed relative truncation bias.
    #[arg(long, default_value_t = 1e-4)]
    pub max_bias: f64,
    /// Hitting: exponent η.
    #[arg(long, default_value_t = 0.5)]
    pub eta: f64,
    /// Poisson: growth rate ρ (default: the policy's own).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Hitting: drift certificate (JSON) to compare against.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LyapunovArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Certificate document (JSON); without it a search over V = (0, v, …, v) runs.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    /// Candidate levels v for the search.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Report whether θ‖c‖ < δ.
    #[arg(long)]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrosscheckTarget {
    Finite,
    Discounted,
    Average,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CrosscheckArgs {
    pub target: CrosscheckTarget,
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Horizon (finite default 1; average default 10 / smallest positive rate).
    #[arg(short = 'T', long = "horizon")]
    pub horizon: Option<f64>,
    #[arg(short = 'N', long = "samples", default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Time steps K (finite) or θ steps L (discounted).
    #[arg(long)]
    pub steps: Option<usize>,
    /// ε of the discounted solve.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    /// Allowed distance in standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub se_multiple: f64,
    /// Policy-iteration vs enumeration tolerance (average).
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli, &argv) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
