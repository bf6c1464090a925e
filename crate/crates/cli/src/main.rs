//! Command-line driver: one TOML config, ten experiment subcommands,
//! deterministic outputs plus a manifest per run.
//!
//! Exit codes: 0 success (warnings go to the manifest), 1 configuration or
//! validation error, 2 runtime failure.

mod commands;
mod config;
mod output;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use config::{ConfigError, ExperimentConfig};
use output::RunDir;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "deltapin",
    version,
    about = "Experiments on 2D gradient interface models with delta-pinning"
)]
struct Cli {
    /// Experiment configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides config and DELTAPIN_OUT)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Base seed override
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Write walk trajectories as JSON lines (hs-verify)
    #[arg(long, global = true)]
    dump_trajectories: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Run the Gibbs sampler and summarize the stream
    Sample,
    /// Covariance curve from the origin
    Covariance,
    /// Covariance curve plus exponential-decay fit
    Mass,
    /// Decay-rate fit across pinning strengths
    MassScan,
    /// Dry-set density and clean-probability curve
    DrysetStats,
    /// Walk occupation times against field covariances
    HsVerify,
    /// Walk hitting probabilities against the per-step bound
    HitBound,
    /// Exact enumeration of the pinned measure on a small box
    Enumerate,
    /// Random-instance audit of the enlargement-tuple construction
    TupleCheck,
    /// Origin-height variance across box sizes
    DelocScan,
}

impl Cmd {
    fn name(self) -> &'static str {
        match self {
            Cmd::Sample => "sample",
            Cmd::Covariance => "covariance",
            Cmd::Mass => "mass",
            Cmd::MassScan => "mass-scan",
            Cmd::DrysetStats => "dryset-stats",
            Cmd::HsVerify => "hs-verify",
            Cmd::HitBound => "hit-bound",
            Cmd::Enumerate => "enumerate",
            Cmd::TupleCheck => "tuple-check",
            Cmd::DelocScan => "deloc-scan",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(k) = cli.threads {
        // a second global-pool build (tests, repeated calls) is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_validation(&e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Configuration problems and refusals exit with 1; everything else that
/// fails is a runtime error (2).
fn is_validation(e: &anyhow::Error) -> bool {
    if e.downcast_ref::<ConfigError>().is_some() {
        return true;
    }
    matches!(
        e.downcast_ref::<deltapin::oracle::OracleError>(),
        Some(deltapin::oracle::OracleError::EnumerationTooLarge { .. })
    )
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let config_path = cli.config.as_ref().ok_or_else(|| {
        anyhow::Error::new(ConfigError::Invalid(
            "--config PATH is required; see config.example.toml".into(),
        ))
    })?;
    let (cfg, config_bytes) = ExperimentConfig::load(config_path)?;
    let seed = cli.seed.unwrap_or(cfg.mcmc.seed);
    let out_dir = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("DELTAPIN_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.outputs.directory));
    let mut run_dir = RunDir::create(&out_dir)?;
    match cli.cmd {
        Cmd::Sample => commands::sample(&cfg, &mut run_dir, seed)?,
        Cmd::Covariance => commands::covariance(&cfg, &mut run_dir, seed)?,
        Cmd::Mass => commands::mass(&cfg, &mut run_dir, seed)?,
        Cmd::MassScan => commands::mass_scan(&cfg, &mut run_dir, seed)?,
        Cmd::DrysetStats => commands::dryset_stats(&cfg, &mut run_dir, seed)?,
        Cmd::HsVerify => commands::hs_verify(&cfg, &mut run_dir, seed, cli.dump_trajectories)?,
        Cmd::HitBound => commands::hit_bound(&cfg, &mut run_dir, seed)?,
        Cmd::Enumerate => commands::enumerate(&cfg, &mut run_dir, seed)?,
        Cmd::TupleCheck => commands::tuple_check(&cfg, &mut run_dir, seed)?,
        Cmd::DelocScan => commands::deloc_scan(&cfg, &mut run_dir, seed)?,
    }
    run_dir.finish_manifest(cli.cmd.name(), &config_bytes, seed)?;
    Ok(())
}
