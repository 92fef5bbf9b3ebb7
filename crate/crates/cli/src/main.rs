//! `tailrisk`: quantile-regression tail-risk runs from a TOML configuration.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tailrisk_core::record::EstimatorChoice;
use tailrisk_core::{Error, Month};

#[derive(Debug, Parser)]
#[command(name = "tailrisk", version, about = "Instrumental-variable quantile regression and unemployment tail risk")]
struct Cli {
    /// Run configuration (TOML), or a manifest from an earlier run.
    #[arg(long, global = true, env = "TAILRISK_CONFIG")]
    config: Option<PathBuf>,

    /// Parent directory for run directories [default: config output_dir, else ./runs].
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Name the run directory by hash only, replacing an earlier identical run.
    #[arg(long, global = true)]
    no_timestamp: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Target {
    /// Group name [default: first configured group].
    #[arg(long)]
    group: Option<String>,
    /// Horizon in months [default: the group's first horizon].
    #[arg(long)]
    horizon: Option<usize>,
    /// Instrument set label [default: the group's first].
    #[arg(long)]
    instrument: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-series descriptive statistics.
    Summarize,
    /// One quantile fit.
    Estimate {
        #[command(flatten)]
        target: Target,
        /// Quantile level [default: estimator.tail_tau].
        #[arg(long)]
        tau: Option<f64>,
        /// qr, ivqr-grid, ivqr-smoothed or ivqr-auto [default: estimator.method].
        #[arg(long)]
        method: Option<EstimatorChoice>,
    },
    /// Fits across the quantile grid, with the 2SLS estimate for comparison.
    Grid {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        method: Option<EstimatorChoice>,
    },
    /// Predictive density at a conditioning month.
    Density {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        method: Option<EstimatorChoice>,
        /// Conditioning month, YYYY-MM [default: density.conditioning_date, else
        /// the last month with all regressors observed].
        #[arg(long)]
        date: Option<Month>,
    },
    /// Tail-risk coefficients for every group, horizon and instrument set, and
    /// contrasts between groups of the same category.
    Tailrisk {
        #[arg(long)]
        method: Option<EstimatorChoice>,
    },
    /// Monte Carlo study against analytic quantile coefficients.
    Mc {
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        estimator: Option<EstimatorChoice>,
    },
    /// Linear IV residual moments and QQ data.
    Diagnostics {
        #[command(flatten)]
        target: Target,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::execute(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<commands::UsageError>().is_some()
                || matches!(e.downcast_ref::<Error>(), Some(Error::Config(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
