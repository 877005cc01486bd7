use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rqlr_cli::error::EXIT_INPUT;
use rqlr_cli::{run, CliError, CliResult, Command, Flags, RunConfig};

/// Robust minimum-distance inference for factor models with a weakly
/// identified factor variance.
#[derive(Parser)]
#[command(name = "rqlr", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Unrestricted minimum-distance fit.
    Estimate(Flags),
    /// Robust QLR test of one null hypothesis.
    Test(Flags),
    /// Confidence set for the factor variance by test inversion.
    Ci(Flags),
    /// Monte Carlo rejection frequencies over a grid of null values.
    RejectCurve(Flags),
    /// Limit quantiles for every drift candidate.
    SimulateQuantiles(Flags),
}

/// Honors `RQLR_THREADS` by sizing the global pool.
fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("RQLR_THREADS") else {
        return Ok(());
    };
    let threads: usize = v.trim().parse().ok().filter(|&t| t > 0).ok_or_else(|| {
        CliError::Config(format!(
            "RQLR_THREADS must be a positive integer, got `{v}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start {threads} threads: {e}")))
}

fn execute(cmd: Command, flags: &Flags) -> CliResult<u8> {
    init_threads()?;
    let cfg = RunConfig::from_flags(flags)?;
    let out = run(cmd, &cfg)?;
    match &cfg.out {
        Some(path) => std::fs::write(path, &out.body).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(out.body.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Io {
                    path: "<stdout>".into(),
                    source,
                })?
        }
    }
    if out.status != 0 {
        eprintln!("rqlr: {} finished with status {}", cmd.name(), out.status);
    }
    Ok(out.status)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let (cmd, flags) = match &cli.command {
        Sub::Estimate(f) => (Command::Estimate, f),
        Sub::Test(f) => (Command::Test, f),
        Sub::Ci(f) => (Command::Ci, f),
        Sub::RejectCurve(f) => (Command::RejectCurve, f),
        Sub::SimulateQuantiles(f) => (Command::SimulateQuantiles, f),
    };
    match execute(cmd, flags) {
        Ok(status) => ExitCode::from(status),
        Err(e) => {
            eprintln!("rqlr: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
