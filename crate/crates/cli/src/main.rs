//! `ilr`: configuration-driven experiment runner.

// `!(x > 0)` is used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use error::CliError;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Generate,
    Train,
    Evaluate,
    PriorRecovery,
    Scaling,
    BoundsCheck,
}

/// In-context inverse linear regression experiments.
///
/// Exit codes: 0 success, 1 check failure, 2 config error, 3 I/O error,
/// 4 training divergence.
#[derive(Debug, Parser)]
#[command(name = "ilr", version)]
struct Cli {
    command: Command,
    /// JSON configuration file.
    config: PathBuf,
    /// Override a configuration field (value parsed as JSON, else string).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let env_seed = std::env::var("ILR_SEED").ok();
    let cfg = config::load(&cli.config, &cli.set, env_seed.as_deref())?;
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("results"));
    match cli.command {
        Command::Generate => commands::generate(&cfg, &out),
        Command::Train => commands::train_model(&cfg, &out),
        Command::Evaluate => commands::evaluate_all(&cfg, &out),
        Command::PriorRecovery => commands::prior_recovery(&cfg, &out),
        Command::Scaling => commands::scaling(&cfg, &out),
        Command::BoundsCheck => commands::bounds_check(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ilr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
