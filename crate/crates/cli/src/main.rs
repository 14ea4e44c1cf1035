//! `quadhedge`: batch front end for the hedging engine, the frontier and
//! Sharpe computations, law-of-one-price audits, the brute-force oracle and
//! the continuous-time counterexample lab.
//!
//! Exit codes: 0 success, 1 oracle mismatch or I/O failure, 2 malformed
//! input, 3 law of one price fails where it is required, 4 numerical
//! failure.

mod commands;
mod market;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use output::Format;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("law of one price fails: opportunity process vanishes at nodes {0:?}")]
    Lop(Vec<u64>),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Mismatch(_) | CliError::Io(_) => 1,
            CliError::Input(_) => 2,
            CliError::Lop(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<quadhedge_core::Error> for CliError {
    fn from(e: quadhedge_core::Error) -> Self {
        use quadhedge_core::Error as E;
        match e {
            E::LopFailure { nodes } => CliError::Lop(nodes),
            E::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "quadhedge", version, about = "Quadratic hedging and mean-variance selection on event trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct MarketArgs {
    /// Market file (JSON).
    #[arg(long)]
    pub market: PathBuf,
    /// Claim file; overrides the claim embedded in the market file.
    #[arg(long)]
    pub claim: Option<PathBuf>,
    /// Comma-separated stop node ids (default: the root).
    #[arg(long)]
    pub tau: Option<String>,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Format of tabular outputs.
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Opportunity process, mean value process, pure hedge and hedging error
    /// per node, plus the decomposition check at each stop node.
    Hedge {
        #[command(flatten)]
        market: MarketArgs,
        /// Initial wealth at every stop node (default: the mean value there).
        #[arg(long)]
        v: Option<f64>,
        /// Relative tolerance on the decomposition residual.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Frontier payoffs over a grid of λ; the claim defaults to zero.
    Frontier {
        #[command(flatten)]
        market: MarketArgs,
        /// λ grid as LO:HI:N.
        #[arg(long, default_value = "-1:1:101", allow_hyphen_values = true)]
        lambda_grid: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Maximal conditional Sharpe ratio with a claim bought at price π.
    Sharpe {
        #[command(flatten)]
        market: MarketArgs,
        #[arg(long, allow_hyphen_values = true)]
        pi: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Law-of-one-price verdict and state price density audit.
    Lop {
        #[arg(long)]
        market: PathBuf,
        /// Absolute tolerance of the density axioms.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compares the engine with the brute-force projection oracle on a
    /// seeded random suite, or on one market.
    OracleCheck {
        /// Check this market instead of the random suite.
        #[arg(long)]
        market: Option<PathBuf>,
        #[arg(long)]
        claim: Option<PathBuf>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Number of random trees.
        #[arg(long, default_value_t = 200)]
        trees: usize,
        /// Relative tolerance, `|x − y| ≤ tol·max(1, |x|, |y|)`.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Monte Carlo lab for the market where the law of one price fails
    /// towards the horizon.
    Counterexample {
        /// `P(τ = T)`.
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 200_000)]
        paths: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Hedge { market, v, tol, out } => commands::hedge(&market, v, tol, &out),
        Command::Frontier { market, lambda_grid, out } => commands::frontier(&market, &lambda_grid, &out),
        Command::Sharpe { market, pi, out } => commands::sharpe(&market, pi, &out),
        Command::Lop { market, tol, out } => commands::lop(&market, tol, &out),
        Command::OracleCheck { market, claim, seed, trees, tol, out } => {
            commands::oracle_check(market.as_deref(), claim.as_deref(), seed, trees, tol, &out)
        }
        Command::Counterexample { p, dt, paths, seed, out } => commands::counterexample(p, dt, paths, seed, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
