use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use onesided::catalog::{BijectionName, TransformSpec};
use onesided::invariance::Verdict;

mod commands;
mod config;
mod problem;

/// One-sided symbols and invariant laws of nonnegative Itô–Lévy processes.
#[derive(Parser)]
#[command(name = "onesided", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate λ(x, ξ).
    Symbol(CommonArgs),
    /// Test candidate laws with the integral criterion (exit 0 / 1 / 4).
    Check(CommonArgs),
    /// Fit a parametric family by minimizing the normalized residual.
    Fit(CommonArgs),
    /// Solve the Laplace-transform ODE of a polynomial symbol.
    Ode(CommonArgs),
    /// Simulate paths, ergodic Laplace transforms or empirical symbols.
    Simulate(CommonArgs),
    /// List built-in models, or show one with --catalog.
    Catalog(CommonArgs),
}

#[derive(Args, Clone, Default)]
pub struct CommonArgs {
    /// JSON model configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in model name.
    #[arg(long)]
    pub catalog: Option<String>,
    /// Catalog parameters, `k=v[,k=v…]`.
    #[arg(long)]
    pub params: Option<String>,
    /// States: `1,2,3` in one dimension, `a,b;c,d` otherwise.
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<String>,
    /// Laplace variables, same syntax as --x.
    #[arg(long)]
    pub xi: Option<String>,
    /// Directory for JSON and CSV outputs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Residual tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Worker threads (falls back to LEVY_ONESIDED_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Family for `fit`: gamma | dirac.
    #[arg(long)]
    pub family: Option<String>,
    /// Candidate law: `gamma:k,θ`, `dirac:x…` or inline JSON; repeatable.
    #[arg(long)]
    pub measure: Vec<String>,
    /// Reduction for real-valued catalog entries: square | bijection.
    #[arg(long, value_parser = parse_transform)]
    pub transform: Option<TransformSpec>,
    /// First moment for order-2 Laplace ODEs.
    #[arg(long)]
    pub m1: Option<f64>,
    /// Long-run Laplace transform estimate.
    #[arg(long)]
    pub ergodic: bool,
    /// Monte Carlo symbol estimate at (x, ξ).
    #[arg(long)]
    pub empirical: bool,
    /// Also write full paths.
    #[arg(long)]
    pub keep_paths: bool,
}

fn parse_transform(s: &str) -> Result<TransformSpec, String> {
    match s {
        "square" => Ok(TransformSpec::Square),
        "bijection" | "canonical" | "bijection:canonical" => Ok(TransformSpec::Bijection(BijectionName::Canonical)),
        other => Err(format!("`{other}` is not square | bijection")),
    }
}

/// Failures mapped onto the exit-code contract.
pub enum Failure {
    /// Exit code 2.
    Config(String),
    /// Exit code 3.
    Numeric(String),
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("LEVY_ONESIDED_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Failure::Config(format!("config error at LEVY_ONESIDED_THREADS: `{v}` is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<commands::Outcome, Failure> {
    let args = match &cli.command {
        Command::Symbol(a) | Command::Check(a) | Command::Fit(a) | Command::Ode(a) | Command::Simulate(a) | Command::Catalog(a) => a,
    };
    if let Some(n) = thread_count(args.threads)? {
        if n == 0 {
            return Err(Failure::Config("config error at --threads: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Numeric(e.to_string()))?;
    }
    match &cli.command {
        Command::Symbol(a) => commands::symbol(a),
        Command::Check(a) => commands::check(a),
        Command::Fit(a) => commands::fit(a),
        Command::Ode(a) => commands::ode(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Catalog(a) => commands::list_catalog(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(commands::Outcome::Done) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Verdict(v)) => ExitCode::from(match v {
            Verdict::Invariant => 0,
            Verdict::NotInvariant => 1,
            Verdict::Inconclusive => 4,
        }),
        Err(Failure::Config(m)) => {
            eprintln!("{m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}
