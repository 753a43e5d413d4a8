//! Command-line experiment driver.
//!
//! Every command resolves its settings (flags, then `--config` file, then
//! defaults), writes CSV/PGM outputs into `--out-dir` and finishes with a
//! `manifest.json` recording the canonical config hash.
//!
//! Exit codes: 0 success, 2 usage, 3 numeric, 4 I/O.

mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) => match e {
                Error::Argument(_) | Error::Feature(_) => 2,
                Error::Io { .. } | Error::Format { .. } => 4,
                _ => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pailab", version, about = "Pruning-at-initialisation graphon laboratory")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default `out`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut distance between empirical and theoretical graphons across widths.
    Converge(commands::ConvergeArgs),
    /// Theoretical and empirical graphon grids at one width.
    Graphon(commands::GraphonArgs),
    /// Path density through three layer kernels.
    Pathdensity(commands::PathDensityArgs),
    /// NTK complexity term under label noise.
    Ntk(commands::NtkArgs),
    /// Dense-core counts against the Chernoff prediction.
    Densecore(commands::DenseCoreArgs),
    /// Embed a fitted approximator into a SNIP-pruned network.
    Uat(commands::UatArgs),
    /// Cut norm of a CSV matrix.
    Cutnorm(commands::CutNormArgs),
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Converge(a) => commands::converge(a),
        Command::Graphon(a) => commands::graphon(a),
        Command::Pathdensity(a) => commands::pathdensity(a),
        Command::Ntk(a) => commands::ntk(a),
        Command::Densecore(a) => commands::densecore(a),
        Command::Uat(a) => commands::uat(a),
        Command::Cutnorm(a) => commands::cutnorm(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pailab: {e}");
            e.exit_code()
        }
    }
}
