use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use chemoblow::experiment::{run_experiment, ExperimentConfig, Scenario, EXIT_USAGE};

/// Certify and simulate finite-time blow-up for radial chemotaxis with
/// indirect signal production.
#[derive(Debug, Parser)]
#[command(name = "chemoblow", version)]
struct Cli {
    /// Experiment file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// blowup, subcritical-probe, certify-only or sweep; overrides the file.
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Reserved. The pipeline is deterministic and ignores it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
    };
    ExitCode::from(code as u8)
}

fn run(cli: &Cli) -> Result<i32, String> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| format!("cannot read {}: {e}", cli.config.display()))?;
    let mut cfg = ExperimentConfig::from_config_str(&text).map_err(|e| e.to_string())?;
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(scenario) = cli.scenario {
        cfg.scenario = scenario;
        cfg.validate().map_err(|e| e.to_string())?;
    }
    let outcome = run_experiment(&cfg, cli.verbose).map_err(|e| e.to_string())?;
    println!("{}", outcome.summary);
    Ok(outcome.exit_code)
}
