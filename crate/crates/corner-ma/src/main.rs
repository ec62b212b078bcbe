//! Thin command-line wrapper over [`corner_ma::scenario::run`].

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use corner_ma::scenario::{self, Outcome, ScenarioConfig, ScenarioKind};
use corner_ma::{Error, Result};

/// Reproducible scenario runs for the corner-asymptotics toolkit.
#[derive(Parser)]
#[command(name = "corner-ma", version, about)]
struct Cli {
    /// Scenario to run: ledger, solve, corner_pipeline, expansion_check,
    /// verify3d, or analyze. Must match the config file.
    scenario: String,
    /// Path to a JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn execute(cli: Cli) -> Result<(Outcome, PathBuf)> {
    let kind = ScenarioKind::from_name(&cli.scenario)?;
    let mut config = ScenarioConfig::from_path(&cli.config)?;
    if config.scenario != kind {
        return Err(Error::Config(format!(
            "config file selects scenario '{}', but '{}' was requested",
            config.scenario.name(),
            kind.name()
        )));
    }
    if let Some(out) = cli.out {
        config.output_dir = out;
    }
    let outcome = scenario::run(&config)?;
    Ok((outcome, config.output_dir))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits with 2 by convention; this tool reserves 2 for
            // threshold failures and reports usage problems as errors.
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    scenario::apply_thread_cap();
    match execute(cli) {
        Ok((Outcome::Pass, dir)) => {
            println!("PASS: artifacts in {}", dir.display());
            ExitCode::SUCCESS
        }
        Ok((Outcome::ThresholdFail, dir)) => {
            println!(
                "THRESHOLD FAIL: see the summary and MANIFEST.json in {}",
                dir.display()
            );
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
