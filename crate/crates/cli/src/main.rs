//! `cmc-forge`: runs the verification pipelines from a JSON configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cmc_forge::config::RunConfig;
use cmc_forge::registry::{CheckSpec, CHECKS};
use cmc_forge::CliError;

#[derive(Parser)]
#[command(name = "cmc-forge", version, about = "Verification pipelines for finite-type CMC tori in S³")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a pipeline and write the report and artifacts.
    Run {
        config: PathBuf,
        /// surface, jacobi, hierarchy, spectral or verify-all.
        #[arg(long)]
        pipeline: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the registered checks.
    ListChecks {
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::ListChecks { json } => {
            list_checks(json);
            ExitCode::SUCCESS
        }
        Command::Run { config, pipeline, out } => {
            let result =
                RunConfig::load(&config).and_then(|cfg| cmc_forge::run(cfg, pipeline.as_deref(), out.as_deref()));
            match result {
                Ok(report) if report.passed => {
                    println!("{} checks, all passed", report.checks.len());
                    ExitCode::SUCCESS
                }
                Ok(report) => {
                    for o in report.failures() {
                        eprintln!(
                            "check failed: {} (measured {:?}, tolerance {}){}",
                            o.name,
                            o.measured,
                            o.tolerance,
                            o.note.as_deref().map(|n| format!(": {n}")).unwrap_or_default()
                        );
                    }
                    ExitCode::from(1)
                }
                Err(e @ CliError::ConfigInvalid(_)) => {
                    eprintln!("{e}");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}

fn list_checks(json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(CHECKS).expect("registry serializes"));
        return;
    }
    for CheckSpec { name, pipeline, anchor, relation, tolerance, .. } in CHECKS {
        println!("{name:<26} {:<10} {anchor:<40} {relation:?} {tolerance:e}", pipeline.name());
    }
}
