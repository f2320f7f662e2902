mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{Config, ConfigError};

#[derive(Parser, Debug)]
#[command(name = "lsdip", version, about = "Low-rank plus sparse deep-image-prior reconstruction for cine MRI")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the generator seed in `[solver]`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Lsdip,
    Classical,
    Adjoint,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the phantom, coils, mask and k-space and write them as LSDV files.
    Simulate,
    /// Reconstruct from simulated data.
    Reconstruct {
        #[arg(long, value_enum, default_value_t = Method::Lsdip)]
        method: Method,
        /// Directory written by `simulate`; the data is simulated in memory when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// PSNR over the `[grid]` lambda_l x lambda_s grid.
    Grid {
        #[arg(long, value_enum, default_value_t = Method::Lsdip)]
        method: Method,
    },
    /// Iterations-to-target for the `[extrapolation]` (alpha, beta) pairs.
    Extrapolation,
    /// Full model against single-network, lambda_s = 0 and lambda_l = 0.
    Ablate,
    /// Pixelwise mean and standard deviation over generator seeds.
    Uncertainty,
}

/// Failure classes with distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Usage(_) | Failure::Config(_) => 1,
                Failure::Validation(_) => 2,
            };
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<lsdip::Error>() {
            return if matches!(e, lsdip::Error::NonFinite(_)) { 3 } else { 2 };
        }
    }
    2
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LSDIP_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Failure::Usage(format!("LSDIP_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config PATH is required".into()))?;
    let mut cfg = Config::load(path).map_err(Failure::Config)?;
    if let Some(seed) = cli.seed {
        cfg.solver.seed = seed;
    }
    let ctx = commands::Context {
        cfg,
        out: cli.out,
        quiet: cli.quiet,
    };
    std::fs::create_dir_all(&ctx.out).map_err(|e| Failure::Validation(format!("{}: {e}", ctx.out.display())))?;
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Reconstruct { method, input } => commands::reconstruct(&ctx, method, input.as_deref()),
        Command::Grid { method } => commands::grid(&ctx, method),
        Command::Extrapolation => commands::extrapolation(&ctx),
        Command::Ablate => commands::ablate(&ctx),
        Command::Uncertainty => commands::uncertainty(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
