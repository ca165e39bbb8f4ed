//! `espim` — compile unstructured-sparse matrices into the compressed PIM
//! layout, execute the scheduled command stream on the cycle-level
//! simulator, and reproduce the speedup/energy studies.
//!
//! Exit codes: 1 config/schema violation, 2 missing or unreadable files,
//! 3 verification failure.

mod config;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use espim_core::Error;
use pipeline::Paths;

#[derive(Parser)]
#[command(name = "espim", version, about)]
struct Cli {
    /// Experiment configuration file (flat `key = value` schema).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Write a per-cycle event trace during simulation.
    #[arg(long, global = true)]
    trace: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the workload matrix and input vector.
    Gen,
    /// Prune the generated matrix to the configured sparsity.
    Prune,
    /// Compile the pruned matrix into a DRAM image and command stream.
    Compile,
    /// Execute the compiled stream on the cycle-level simulator.
    Sim,
    /// Re-check every artifact against the reference oracles.
    Verify,
    /// Run the configured sensitivity sweep and emit the report CSV.
    Sweep {
        /// Recompute a single cell and print its row to stdout.
        #[arg(long)]
        cell: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // configuration problems are always schema (1) or IO (2) errors,
    // regardless of the subcommand
    let cfg = match cli
        .config
        .as_deref()
        .ok_or_else(|| Error::invalid("--config <file> is required"))
        .and_then(ExperimentConfig::load)
    {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(match e {
                Error::Io(_) => 2,
                _ => 1,
            });
        }
    };
    let verify = matches!(cli.cmd, Cmd::Verify);
    match dispatch(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify(&e, verify))
        }
    }
}

fn classify(e: &Error, in_verify: bool) -> u8 {
    match e {
        Error::Io(_) => 2,
        _ if in_verify => 3,
        Error::InvalidArgument(_) | Error::Parse { .. } => 1,
        _ => 2,
    }
}

fn dispatch(cli: &Cli, cfg: &ExperimentConfig) -> Result<(), Error> {
    let paths = Paths::new(&cli.out);
    match cli.cmd {
        Cmd::Gen => pipeline::cmd_gen(cfg, &paths),
        Cmd::Prune => pipeline::cmd_prune(cfg, &paths),
        Cmd::Compile => pipeline::cmd_compile(cfg, &paths),
        Cmd::Sim => pipeline::cmd_sim(cfg, &paths, cli.trace),
        Cmd::Verify => pipeline::cmd_verify(cfg, &paths),
        Cmd::Sweep { cell } => report::cmd_sweep(cfg, &paths, cell),
    }
}
