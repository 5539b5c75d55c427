mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Outcome;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{now_ms, Outputs, RunManifest};

const SIMULATE_HELP: &str = "Outputs:
  density.csv        time,global_density,origin_density,min_local_density,max_local_density
  snapshot_*.barw    binary snapshots at simulate.snapshot_times
  summary.json       final density, extinction flag, burn-in attempts";

const CERTIFY_HELP: &str = "Outputs:
  certify.json       per-radius certification report, Bernstein bounds, optional Monte Carlo checks
Exit code 1 when any radius fails to certify.";

const BLOCK_HELP: &str = "Outputs:
  reports.jsonl      one coupling report per trial
  summary.json       good-block counts per R, trend and re-check flags
  goodness.csv       x_1..x_d,n,gamma,a_spread,a_couple (when block.goodness_extent > 0)
Exit code 1 when the good-block frequency decreases in R or a re-check fails.";

const LINEAGE_HELP: &str = "Outputs:
  paths.csv          path,k,x_1..x_d,drift_1..drift_d,y_1..y_d
  moments.csv        k, then mean and variance per axis
  stats.json         LLN, CLT, functional CLT and speed-bound reports
Exit code 1 when a diagnostic fails.";

#[derive(Parser)]
#[command(name = "barw", version, about = "Branching annihilating random walk experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides run.seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads.
    #[arg(long, global = true, env = "BARW_THREADS")]
    threads: Option<usize>,

    /// Directory receiving the outputs and manifest.json.
    #[arg(long, global = true, default_value = "barw-out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Burn-in and trajectory with snapshots and a density time series.
    #[command(after_help = SIMULATE_HELP)]
    Simulate,
    /// Certify comparison density profiles.
    #[command(after_help = CERTIFY_HELP)]
    Certify,
    /// Block coupling trials and the goodness field.
    #[command(name = "block-probe", after_help = BLOCK_HELP)]
    BlockProbe,
    /// Ancestral lineages with LLN/CLT and speed-bound diagnostics.
    #[command(after_help = LINEAGE_HELP)]
    Lineage,
    /// Check the digests in --out-dir against its manifest.
    Verify {
        /// Also repeat the recorded run and compare the outputs.
        #[arg(long)]
        rerun: bool,
    },
}

fn execute(cfg: &RunConfig, subcommand: &str, dir: &Path, threads: usize) -> Result<bool, CliError> {
    let started = now_ms();
    let mut out = Outputs::create(dir)?;
    let outcome = match subcommand {
        "simulate" => commands::simulate::run(cfg, &mut out)?,
        "certify" => commands::certify::run(cfg, &mut out)?,
        "block-probe" => commands::block::run(cfg, &mut out)?,
        "lineage" => commands::lineage::run(cfg, &mut out)?,
        other => return Err(CliError::Config(format!("unknown subcommand {other} in manifest"))),
    };
    print_outcome(&outcome);
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        config: cfg.clone(),
        seed: cfg.run.seed,
        stream: cfg.run.stream,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        threads,
        started_at_ms: started,
        finished_at_ms: now_ms(),
        pass: outcome.pass,
        outputs: out.digests().clone(),
    };
    out.finish(&manifest)?;
    Ok(outcome.pass)
}

fn print_outcome(outcome: &Outcome) {
    for l in &outcome.lines {
        println!("{l}");
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let threads = cli.threads.unwrap_or_else(rayon::current_num_threads);
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let name = match &cli.command {
        Command::Simulate => "simulate",
        Command::Certify => "certify",
        Command::BlockProbe => "block-probe",
        Command::Lineage => "lineage",
        Command::Verify { rerun } => {
            let outcome = commands::verify::run(&cli.out_dir, *rerun, |cfg, sub, dir| execute(cfg, sub, dir, threads).map(|_| ()))?;
            print_outcome(&outcome);
            return Ok(outcome.pass);
        }
    };
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    execute(&cfg, name, &cli.out_dir, threads)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
