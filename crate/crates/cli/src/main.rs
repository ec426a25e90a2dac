// `!(x > y)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use credit_lattice::ErrorCategory;

mod commands;
mod config;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] credit_lattice::Error),
}

impl CliError {
    fn category(&self) -> ErrorCategory {
        match self {
            CliError::Usage(_) => ErrorCategory::Usage,
            CliError::Core(e) => e.category(),
        }
    }
}

/// Structural credit calibration: implied asset/equity vol, implied drift and
/// up/downside probability surfaces, and a downside-probability stress signal.
#[derive(Debug, Parser)]
#[command(name = "credit-lattice", version)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic fixture into the output directory.
    Synthesize {
        #[arg(long)]
        seed: u64,
    },
    /// Load, clean and summarise one snapshot.
    Ingest,
    /// Build a calibrated surface for the snapshot date.
    Calibrate {
        #[arg(value_enum)]
        task: Task,
    },
    /// Cellwise comparison of two volatility surfaces (records files).
    Surface {
        #[arg(value_enum)]
        op: SurfaceOp,
        a: PathBuf,
        b: PathBuf,
        /// Output file stem inside the output directory.
        #[arg(long)]
        name: Option<String>,
    },
    /// Downside-probability signal series from dated surfaces.
    Stress {
        /// DOWNSIDE_PROB records files; defaults to every one in the output directory.
        surfaces: Vec<PathBuf>,
    },
    /// Re-export a records file in another format.
    Export {
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Task {
    AssetVol,
    EquityVol,
    Drift,
    Prob,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SurfaceOp {
    Diff,
    Reldiff,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Grid,
    Records,
    Svg,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = RunConfig::resolve(cli.config.as_deref(), &cli.set)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads()?)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synthesize { seed } => commands::synthesize(&config, seed),
        Command::Ingest => commands::ingest(&config),
        Command::Calibrate { task } => commands::calibrate(&config, task),
        Command::Surface { op, a, b, name } => commands::surface(&config, op, &a, &b, name.as_deref()),
        Command::Stress { surfaces } => commands::stress(&config, &surfaces),
        Command::Export { input, format, out } => commands::export(&input, format, &out),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                ErrorCategory::Usage.exit_code()
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!(
                "error category={} code={}: {e}",
                category.as_str(),
                category.exit_code()
            );
            ExitCode::from(category.exit_code() as u8)
        }
    }
}
