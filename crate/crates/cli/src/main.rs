//! `blindid`: simulate datasets, identify dynamics and inputs, check
//! identifiability and run Monte Carlo studies from a JSON config.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use blindid_core::model::Mode;
use commands::Outcome;
use config::{Command, RunConfig};

#[derive(Parser)]
#[command(name = "blindid", version, about = "Blind identification of time-varying linear systems with sparse inputs")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Generate a synthetic dataset bundle and its ground truth.
    Simulate(RunArgs),
    /// Recover dynamics and sparse inputs from a dataset bundle.
    Identify(RunArgs),
    /// Check the identifiability conditions of a dataset bundle.
    Diagnose(RunArgs),
    /// Run a Monte Carlo study at one configuration.
    Montecarlo(RunArgs),
    /// Run Monte Carlo studies over a grid of experiment counts and noise levels.
    Sweep(RunArgs),
    /// Re-run the configuration stored in a manifest and compare checksums.
    Replay {
        manifest: PathBuf,
        /// Output directory for the re-run (default: `<manifest dir>/replay`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Dataset bundle directory for `identify` and `diagnose`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Also write the dense sensing block and measurements as CSV.
    #[arg(long)]
    dump_sensing: Option<PathBuf>,
    /// Write SVG charts next to the metrics.
    #[arg(long)]
    plots: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ltv,
    Lti,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ltv => Mode::Ltv,
            ModeArg::Lti => Mode::Lti,
        }
    }
}

fn resolve(command: Command, args: RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.command = Some(command);
    if let Some(seed) = args.seed {
        cfg.synthetic.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.out = out;
    }
    let mode = args.mode.map_or(cfg.mode, Mode::from);
    cfg.set_mode(mode);
    if let Some(d) = args.dataset {
        cfg.dataset = Some(d);
    }
    if let Some(d) = args.dump_sensing {
        cfg.dump_sensing = Some(d);
    }
    cfg.plots |= args.plots;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> anyhow::Result<Outcome> {
    let (command, args) = match cli.command {
        CliCommand::Simulate(a) => (Command::Simulate, a),
        CliCommand::Identify(a) => (Command::Identify, a),
        CliCommand::Diagnose(a) => (Command::Diagnose, a),
        CliCommand::Montecarlo(a) => (Command::Montecarlo, a),
        CliCommand::Sweep(a) => (Command::Sweep, a),
        CliCommand::Replay { manifest, out } => return commands::replay(&manifest, out),
    };
    let cfg = resolve(command, args).context("resolving configuration")?;
    commands::run(command, &cfg)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::NotIdentifiable(reasons)) => {
            eprintln!("not identifiable:");
            for r in reasons {
                eprintln!("  {r}");
            }
            ExitCode::from(2)
        }
        Ok(Outcome::NotConverged(detail)) => {
            eprintln!("solver did not converge: {detail}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
