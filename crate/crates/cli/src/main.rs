//! `spgru`: train SP-GRU models, measure uncertainty under trajectory
//! deviations, export uncertainty maps and run the moment oracles.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 I/O error,
//! 3 oracle verification failure.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spgru_core::data::SuiteKind;

use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "spgru", version, about = "Sampling-free probabilistic GRU")]
struct Cli {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to SPGRU_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on the configured trajectory and write checkpoint.bin and metrics.log.
    Train {
        /// Continue from an existing checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Average summed predictive variance on the deviation suites.
    EvalDeviation {
        #[arg(long)]
        checkpoint: PathBuf,
        /// angle, speed, noise or all.
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Mean and variance maps of one predicted sequence as PGM images.
    ExportMaps {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Take the sequence from this deviation suite instead of the reference data.
        #[arg(long)]
        suite: Option<SuiteKind>,
        /// Suite level, 0 being the reference setting.
        #[arg(long, default_value_t = 0)]
        level: usize,
        #[arg(long, default_value_t = 0)]
        sequence: usize,
    },
    /// Check the closed-form moment operations against Monte Carlo estimates.
    Oracle {
        /// Samples per check, overriding [oracle].samples.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Write the training set and deviation suites as dataset files.
    Generate {
        /// Also write PGM frames of the first sequence of each file.
        #[arg(long)]
        preview: bool,
    },
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("SPGRU_THREADS") {
        Ok(v) if !v.is_empty() => v
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("SPGRU_THREADS must be a positive integer, got `{v}`"))),
        _ => Ok(None),
    }
}

fn require_out(out: Option<&Path>) -> Result<&Path, CliError> {
    out.ok_or_else(|| CliError::Config("--out is required for this command".into()))
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = threads(cli.threads)? {
        if n == 0 {
            return Err(CliError::Config("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?;
    }
    let text = match &cli.config {
        Some(p) => Some(
            std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("cannot read config {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let cfg = match (&text, &cli.config) {
        (Some(t), Some(p)) => RunConfig::parse(t).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
            other => other,
        })?,
        _ => RunConfig::default(),
    };
    let mut cfg = cfg.with_seed(cli.seed);
    let out = cli.out.as_deref();
    match cli.command {
        Command::Train { resume } => commands::cmd_train(&cfg, text.as_deref(), require_out(out)?, resume),
        Command::EvalDeviation { checkpoint, suite } => {
            let suites = if suite == "all" {
                SuiteKind::ALL.to_vec()
            } else {
                vec![suite.parse::<SuiteKind>()?]
            };
            commands::cmd_eval_deviation(&cfg, &checkpoint, &suites, require_out(out)?)
        }
        Command::ExportMaps {
            checkpoint,
            suite,
            level,
            sequence,
        } => commands::cmd_export_maps(&cfg, &checkpoint, suite.map(|k| (k, level)), sequence, require_out(out)?),
        Command::Oracle { samples } => {
            if let Some(n) = samples {
                cfg.oracle.samples = n;
            }
            commands::cmd_oracle(&cfg, out)
        }
        Command::Generate { preview } => commands::cmd_generate(&cfg, require_out(out)?, preview),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
