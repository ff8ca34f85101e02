use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use csd_observer::config::load_config;
use csd_observer::observer::ObserverScheme;
use csd_observer::pipeline::{run_pipeline, Stage};

/// Batch crystallizer NDF estimation from a third-moment measurement.
#[derive(Debug, Parser)]
#[command(name = "csd-observer", version)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `outputs` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Stage to run: simulate, observe, reconstruct, analyze or run.
    #[arg(long, global = true)]
    stage: Option<Stage>,

    /// Comma-separated regularization weights, one estimate file each.
    #[arg(long, global = true, value_delimiter = ',')]
    delta_sweep: Option<Vec<f64>>,

    /// Noise seed (overrides `noise.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Integrate the observers with explicit Euler instead of the exact
    /// exponential step.
    #[arg(long, global = true)]
    faithful_euler: bool,

    /// Record per-step solve times in the metrics file.
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Simulate the batch and write ndf.csv and output.csv.
    Simulate,
    /// Run the observer bank on output.csv.
    Observe,
    /// Invert the observer states into estimate.csv and metrics.csv.
    Reconstruct,
    /// Evaluate the configured checks into checks.csv.
    Analyze,
    /// All of the above.
    Run,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Self {
        match c {
            Command::Simulate => Stage::Simulate,
            Command::Observe => Stage::Observe,
            Command::Reconstruct => Stage::Reconstruct,
            Command::Analyze => Stage::Analyze,
            Command::Run => Stage::Run,
        }
    }
}

fn execute(cli: Cli) -> Result<bool> {
    let stage = match (cli.command.map(Stage::from), cli.stage) {
        (Some(a), Some(b)) if a != b => bail!("subcommand `{a}` conflicts with --stage {b}"),
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => Stage::Run,
    };
    let Some(path) = cli.config else {
        bail!("--config PATH is required");
    };
    let mut config = load_config(&path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(out) = cli.out {
        config.outputs = out;
    }
    if let Some(sweep) = cli.delta_sweep {
        config.delta_sweep = sweep;
    }
    if let Some(seed) = cli.seed {
        config.noise.seed = seed;
    }
    if cli.faithful_euler {
        config.observer.scheme = ObserverScheme::ExplicitEuler;
    }
    config.timing |= cli.timing;

    let report = run_pipeline(&config, stage)?;
    for path in &report.written {
        println!("wrote {}", path.display());
    }
    if let Some(hit) = report.kernel_cache_hit {
        println!("kernel cache {}", if hit { "hit" } else { "miss" });
    }
    for c in &report.checks {
        println!(
            "{} {}: {:.6e} (tolerance {:.3e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.quantity,
            c.value,
            c.tolerance
        );
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
