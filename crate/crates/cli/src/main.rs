use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use wflow::config::ExperimentConfig;
use wflow::{check, plot, runner};

/// Experiment runner for measure-space optimization schemes: mirror
/// descent and preconditioned gradient descent on particle clouds, and
/// closed-form Gaussian flows.
#[derive(Parser)]
#[command(name = "wflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config; writes trace CSVs,
    /// the final state, and summary.json into the config's output
    /// directory.
    Run {
        /// Path to the experiment config (JSON, one experiment per file).
        config: PathBuf,
    },
    /// Reformat a trace CSV into gnuplot-ready plot data.
    Plot {
        /// Trace CSV produced by `wflow run`.
        trace: PathBuf,
        /// Output path for the two-column (iter, objective) data.
        out: PathBuf,
        /// Also emit `<out>.scatter` with the positions of this point
        /// cloud CSV.
        #[arg(long)]
        cloud: Option<PathBuf>,
        /// Annotate the output as intended for a log-scale axis (metadata
        /// only, values are untouched).
        #[arg(long)]
        log_scale: bool,
    },
    /// Run the numerical diagnostics suite (gradient checks, Bregman
    /// axioms, divergence properties) and report one line per check.
    Check {
        /// Seed of the random check suite.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// `WFLOW_THREADS` caps the size of the global worker pool used by the
/// inner solvers. Results are identical across thread counts.
fn configure_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("WFLOW_THREADS") {
        let threads: usize = raw
            .parse()
            .with_context(|| format!("WFLOW_THREADS must be a positive integer (got {raw:?})"))?;
        if threads == 0 {
            anyhow::bail!("WFLOW_THREADS must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("failed to configure the worker pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match try_main() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn try_main() -> Result<ExitCode> {
    configure_threads()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let completed = runner::run_experiment(&cfg)?;
            if completed {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "scheme failed; see {}",
                    cfg.output_dir.join("summary.json").display()
                );
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Plot {
            trace,
            out,
            cloud,
            log_scale,
        } => {
            plot::emit_plotdata(&trace, &out, cloud.as_deref(), log_scale)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { seed } => {
            let failed = check::run_checks(seed);
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
