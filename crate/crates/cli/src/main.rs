//! `nlab`: validation, aggregation, pricing and the counterexample suite.
//!
//! Exit codes: 0 success, 1 domain failure (invalid input, failed precondition or
//! assertion), 2 I/O, parse or usage error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// `Σ S̄_i(0) Q_i` for a numéraire-consistent family.
    Consistent,
    /// Average of the basket-unit changes of per-currency martingale measures.
    Martingale,
    /// Strongest-currency deflator under `Σ Q_i / d`.
    Deflator,
}

#[derive(Debug, Parser)]
#[command(name = "nlab", version, about = "Devaluation-aware multi-currency valuation")]
pub struct Cli {
    /// Output format; `counterexamples` prints one line per fixture when omitted.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Tolerance for consistency and martingale checks.
    #[arg(long, global = true, value_parser = positive_float)]
    pub tol: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an exchange-matrix or tree file.
    Validate { file: PathBuf },
    /// Build a valuation measure for the basket from a tree file's measures.
    Aggregate {
        file: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Switching margin of the deflator construction.
        #[arg(long, default_value_t = 0.5, value_parser = positive_float)]
        epsilon: f64,
        /// Measure names in currency order (default `Q1..Qd`).
        #[arg(long, value_delimiter = ',')]
        family: Option<Vec<String>>,
    },
    /// Price exchange options in the two-currency jump model.
    Price {
        params: PathBuf,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        strikes: Vec<f64>,
        /// Add Monte Carlo columns.
        #[arg(long)]
        mc: bool,
        #[arg(long, default_value_t = 1_000_000, value_parser = clap::value_parser!(u64).range(1..))]
        paths: u64,
        #[arg(long, env = "NLAB_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Run the counterexample fixtures and check their verdicts.
    Counterexamples {
        /// Read fixtures from this directory instead of the built-in ones.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Write the built-in fixtures to this directory and exit.
        #[arg(long, conflicts_with = "fixtures")]
        write_fixtures: Option<PathBuf>,
    },
}

fn positive_float(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(format!("must be positive and finite, got {s}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(outcome) => {
            if let Err(e) = output::emit(cli.out.as_deref(), &outcome.body) {
                eprintln!("error: {e:#}");
                return ExitCode::from(2);
            }
            if let Some(msg) = &outcome.message {
                eprintln!("{msg}");
            }
            ExitCode::from(outcome.code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
