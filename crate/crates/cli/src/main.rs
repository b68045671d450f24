//! `updrom`: data generation, training, inference, UQ, adaptive sampling and
//! report emission for parametrised reduced-order models.

mod commands;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use updrom::datagen::Case;

/// Failures the CLI raises itself, before any library call.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing input: {0}")]
    Missing(String),
}

#[derive(Parser)]
#[command(name = "updrom", version, about = "Parametrised, uncertainty-aware reduced-order modelling")]
struct Cli {
    /// TOML run configuration (defaults to the preset of the chosen case).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed and the ensemble seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root output directory; each command writes into its own subdirectory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured system at every sweep value.
    Generate {
        #[arg(long)]
        case: Option<Case>,
        /// `name=v1,v2,...`; defaults to the configured grid and training points.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Train a model on the configured training points.
    Train {
        /// Directory written by `generate` (default OUT/data).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Roll the model out on held-out data and score it.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `name=value`; repeatable. Defaults to every grid point.
        #[arg(long = "param")]
        params: Vec<String>,
        /// Score back-to-back lookback/horizon windows instead of one rollout.
        #[arg(long)]
        windows: bool,
    },
    /// Second-pass ensemble uncertainty of the rollouts.
    Uq {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Ensemble size.
        #[arg(long)]
        n: Option<usize>,
        /// Confidence-interval half width in units of the spread.
        #[arg(long)]
        k: Option<f64>,
        #[arg(long = "param")]
        params: Vec<String>,
        #[arg(long)]
        windows: bool,
    },
    /// Uncertainty-driven retraining over the grid.
    Adapt {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Collect plot-ready CSVs from earlier runs.
    Report {
        /// Output root of earlier runs (default OUT).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => 2,
                CliError::Missing(_) => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<updrom::Error>() {
            return core_code(e);
        }
    }
    1
}

fn core_code(err: &updrom::Error) -> u8 {
    use updrom::autodiff::TensorError;
    use updrom::Error;
    match err {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
        Error::Config(_) | Error::Schema(_) => 4,
        Error::Divergence { .. }
        | Error::NonFiniteLoss { .. }
        | Error::ZeroEnergy(_)
        | Error::ZeroVariance(_)
        | Error::Tensor(TensorError::NonFinite { .. }) => 5,
        Error::Generator { source, .. } => core_code(source),
        _ => 1,
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("UPDROM_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("UPDROM_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let globals = commands::Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    match cli.command {
        Command::Generate { case, sweep } => commands::generate(&globals, case, sweep.as_deref()),
        Command::Train { data } => commands::train(&globals, data),
        Command::Infer {
            checkpoint,
            data,
            params,
            windows,
        } => commands::infer(&globals, checkpoint, data, &params, windows),
        Command::Uq {
            checkpoint,
            data,
            n,
            k,
            params,
            windows,
        } => commands::uq(&globals, checkpoint, data, n, k, &params, windows),
        Command::Adapt {
            checkpoint,
            budget,
            threshold,
        } => commands::adapt(&globals, checkpoint, budget, threshold),
        Command::Report { dir } => commands::report(&globals, dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
