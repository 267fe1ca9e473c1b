use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod inputs;
mod meta;

use commands::Ctx;

/// Race-and-place and causal risk ratio estimation for policing data.
#[derive(Parser, Debug)]
#[command(name = "rap", version = meta::VERSION, propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON config file; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (falls back to RAP_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Seed for every random draw in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a full population table plus its potential-outcome sidecar.
    Simulate(commands::simulate::SimulateArgs),
    /// Causal risk ratio per precinct.
    Crr(commands::crr::CrrArgs),
    /// Race-and-place curve over a grid of r.
    Rap(commands::rap::RapArgs),
    /// Covariate-shift bounds and the monotone-stop check on the curve.
    Bounds(commands::bounds::BoundsArgs),
    /// Worst-case bias over a grid of sensitivity parameters.
    SensContour(commands::contour::ContourArgs),
    /// Informal and formal benchmarking of observed covariates.
    Benchmark(commands::benchmark::BenchmarkArgs),
    /// Repeated simulation scored against the known truth.
    Study(commands::study::StudyArgs),
    /// Sensitivity parameters as an assumption violation grows.
    Sweep(commands::sweep::SweepArgs),
}

fn threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("RAP_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = v.trim().parse().with_context(|| format!("RAP_THREADS = {v:?} is not a count"))?;
            Ok(Some(n))
        }
        _ => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = threads(cli.global.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("starting worker pool")?;
    }
    std::fs::create_dir_all(&cli.global.out).with_context(|| format!("creating {}", cli.global.out.display()))?;
    let ctx = Ctx {
        config: cli.global.config,
        out: cli.global.out,
        seed: cli.global.seed,
    };
    match cli.command {
        Command::Simulate(a) => commands::simulate::run(&ctx, &a),
        Command::Crr(a) => commands::crr::run(&ctx, &a),
        Command::Rap(a) => commands::rap::run(&ctx, &a),
        Command::Bounds(a) => commands::bounds::run(&ctx, &a),
        Command::SensContour(a) => commands::contour::run(&ctx, &a),
        Command::Benchmark(a) => commands::benchmark::run(&ctx, &a),
        Command::Study(a) => commands::study::run(&ctx, &a),
        Command::Sweep(a) => commands::sweep::run(&ctx, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<config::ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
