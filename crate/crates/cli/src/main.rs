//! `brokenray`: scenario-driven simulation of broken-ray scattering
//! geometry with deterministic file outputs.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input error,
//! 3 infeasible request (closed channel / unrealizable string).

mod commands;
mod emit;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CmdError;
use scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "brokenray",
    version,
    about = "Broken bicharacteristics at the sphere at infinity: traces, relations, bounds, and Lagrangian certificates"
)]
struct Cli {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Override the scenario's total energy λ.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Override the scenario's break budget.
    #[arg(long, global = true)]
    max_breaks: Option<usize>,
    /// Override the scenario's RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Trace stream format.
    #[arg(long, global = true, default_value = "jsonl", value_parser = ["jsonl", "csv"])]
    format: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and verify broken rays; write traces and the τ profile.
    Trace {
        /// Explicit break string, e.g. "free:0;L1;free:0" (default: sweep
        /// every enumerated string).
        #[arg(long)]
        string: Option<String>,
    },
    /// Sample the channel relation R_{βα} and certify its strings.
    Relation {
        /// Incoming channel selector: table index or "cluster/index".
        #[arg(long)]
        alpha: String,
        /// Outgoing channel selector.
        #[arg(long)]
        beta: String,
    },
    /// Compute {l, C₀, C₁, M_N} and compare with an empirical sweep.
    Bounds,
    /// Chain-compose Lagrangians and emit eigenvalue/residual certificates.
    Certify {
        /// Chain specification file (default: sample chains from a sweep).
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// List permissible break strings as JSON lines on stdout.
    Enumerate,
}

fn run(cli: Cli) -> Result<i32, CmdError> {
    let path = cli
        .scenario
        .as_ref()
        .ok_or_else(|| CmdError::Input("--scenario is required".to_string()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CmdError::Input(format!("read {path:?}: {e}")))?;
    let mut scenario = Scenario::parse(&text).map_err(CmdError::Input)?;
    if let Some(l) = cli.lambda {
        scenario.lambda = l;
    }
    if let Some(m) = cli.max_breaks {
        scenario.params.max_breaks = m;
    }
    if let Some(s) = cli.seed {
        scenario.params.seed = s;
    }
    let compiled = scenario.compile().map_err(CmdError::Input)?;

    match &cli.command {
        Command::Trace { string } => {
            commands::cmd_trace(&compiled, string.as_deref(), &cli.out, &cli.format)
        }
        Command::Relation { alpha, beta } => {
            commands::cmd_relation(&compiled, alpha, beta, &cli.out)
        }
        Command::Bounds => commands::cmd_bounds(&compiled, &cli.out),
        Command::Certify { chain } => {
            commands::cmd_certify(&compiled, chain.as_deref(), &cli.out)
        }
        Command::Enumerate => commands::cmd_enumerate(&compiled),
    }
}

fn main() -> ExitCode {
    // BROKENRAY_THREADS caps the worker pool; outputs are merged in
    // canonical order so the thread count never changes results.
    if let Ok(v) = std::env::var("BROKENRAY_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
