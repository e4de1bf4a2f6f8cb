use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use driftlimit::harness::{self, config::Experiment, config::RunConfig};

#[derive(Parser, Debug)]
#[command(name = "driftlimit", version, about = "Two-fluid plasma solvers near the drift limit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override such as `physics.dt=1e-6` or `preset=stationary`.
    #[arg(long = "override", value_name = "K=V")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Multiplies every grid resolution.
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Manufactured-solution convergence of the diffusion solver.
    DiffusionValidate(Common),
    /// Two-fluid run from the perturbed stationary state.
    Simulate(Common),
    /// Stability map over the regularization constant and time step.
    CStudy(Common),
}

fn load(kind: Experiment, c: &Common) -> driftlimit::Result<RunConfig> {
    let text = c.config.as_ref().map(std::fs::read_to_string).transpose()?;
    let mut overrides = c.overrides.clone();
    let name = serde_json::to_value(kind)?;
    overrides.push(format!("experiment={}", name.as_str().expect("enum name")));
    let mut cfg = RunConfig::from_sources(text.as_deref(), &overrides)?;
    if let Some(s) = c.scale {
        cfg.scale_resolution(s)?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::DiffusionValidate(c) => (Experiment::DiffusionValidate, c),
        Command::Simulate(c) => (Experiment::Simulate, c),
        Command::CStudy(c) => (Experiment::CStudy, c),
    };
    let result = load(kind, common).and_then(|cfg| harness::run(&cfg, &common.out));
    match result {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            eprintln!("outputs written to {}", common.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
