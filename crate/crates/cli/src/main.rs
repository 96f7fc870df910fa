use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;

use config::UsageError;

/// Stochastic field ensembles, Kubo coefficients and relativistic diffusion.
#[derive(Parser)]
#[command(name = "reldiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Positivity, Bianchi identity and two-point checks of a spectral density.
    ValidateField(Common),
    /// Diffusion constant from a correlation profile by both routes.
    Kubo(Common),
    /// Runs every `[[experiment]]` and writes a manifest.
    Run(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (required by `run`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .init();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(cli: &Cli) -> commands::Outcome {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(UsageError("--workers must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let common = match &cli.command {
        Command::ValidateField(c) | Command::Kubo(c) | Command::Run(c) => c,
    };
    let out = common.out.as_deref();
    let mut cfg = config::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let dir = common.config.parent().unwrap_or(Path::new("."));
    match &cli.command {
        Command::ValidateField(_) => commands::validate_field(&cfg, out),
        Command::Kubo(_) => commands::kubo(&cfg, dir, out),
        Command::Run(_) => match out {
            Some(out) => commands::run(&cfg, out),
            None => Err(UsageError("run needs --out DIR".into()).into()),
        },
    }
}
