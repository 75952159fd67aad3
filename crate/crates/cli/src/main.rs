use anyhow::Result;
use clap::{Parser, Subcommand};
use mcgdiff_cli::experiments;
use mcgdiff_cli::{ExperimentKind, Manifest, Overrides, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mcgdiff", version, about = "Posterior sampling experiments with diffusion priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid mixture prior, random measurement model, SW against the exact posterior.
    RunGmm(#[command(flatten)] Overrides),
    /// Noiseless and noisy Gaussian checks against closed-form posteriors.
    ConjugateCheck(#[command(flatten)] Overrides),
    /// Bias of a particle estimate across particle counts.
    BiasSweep(#[command(flatten)] Overrides),
    /// Coarse timestep selection, checked against a second implementation.
    Timesteps(#[command(flatten)] Overrides),
    /// Sliced Wasserstein distance between two sample CSV files.
    Sw {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn execute(cfg: &RunConfig, command: &Command) -> Result<Manifest> {
    match command {
        Command::RunGmm(_) => experiments::run_gmm(cfg),
        Command::ConjugateCheck(_) => experiments::run_conjugate_check(cfg),
        Command::BiasSweep(_) => experiments::run_bias_sweep(cfg),
        Command::Timesteps(_) => experiments::run_timesteps(cfg),
        Command::Sw { a, b, .. } => experiments::run_sw_compare(cfg, a, b),
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (kind, ov) = match &cli.command {
        Command::RunGmm(o) => (ExperimentKind::Gmm, o),
        Command::ConjugateCheck(o) => (ExperimentKind::ConjugateCheck, o),
        Command::BiasSweep(o) => (ExperimentKind::BiasSweep, o),
        Command::Timesteps(o) => (ExperimentKind::Timesteps, o),
        Command::Sw { overrides, .. } => (ExperimentKind::SwCompare, overrides),
    };
    let cfg = RunConfig::resolve(kind, ov)?;
    let manifest = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(|| execute(&cfg, &cli.command))?,
        None => execute(&cfg, &cli.command)?,
    };
    for check in &manifest.checks {
        println!("{}", check.line());
    }
    for (k, v) in &manifest.summary {
        log::info!("{k} = {v}");
    }
    println!("wrote {} ({:.1} s)", cfg.out_dir().join(mcgdiff_cli::manifest::MANIFEST_FILE).display(), manifest.wall_time_s);
    Ok(manifest.passed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
