use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod config;
mod run;

use config::Config;
use run::Ctx;

/// Median-of-means minmax regression: data generation, fitting, cross
/// validation, outlier detection and the paper's simulation experiments.
#[derive(Debug, Parser)]
#[command(name = "momreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the configuration.
    #[arg(long, global = true, env = "MOMREG_OUT")]
    out: Option<PathBuf>,

    /// Worker threads for repetitions and grid searches.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset to `dataset.csv`.
    Generate,
    /// Fit one estimator and write its estimate and iteration trace.
    Fit,
    /// Select K and lambda by MOM cross validation.
    Cv,
    /// Run the experiment named in the configuration.
    Experiment,
    /// Score rows by median-block selection counts.
    Detect,
    /// Probe the breakdown number against gross outliers.
    Breakdown,
}

fn setup(cli: &Cli) -> Result<Ctx> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create output directory {}", cfg.output_dir.display()))?;
    let out = cfg.output_dir.clone();
    Ok(Ctx { cfg, out })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = match setup(&cli) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Generate => run::generate_cmd(&ctx),
        Command::Fit => run::fit_cmd(&ctx),
        Command::Cv => run::cv_cmd(&ctx),
        Command::Experiment => run::experiment_cmd(&ctx),
        Command::Detect => run::detect_cmd(&ctx),
        Command::Breakdown => run::breakdown_cmd(&ctx),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
