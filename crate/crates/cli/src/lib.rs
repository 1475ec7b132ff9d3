//! Library half of the `cmc-forge` command: configuration, the check
//! registry, pipeline evaluation and the text exports.

pub mod config;
pub mod export;
pub mod pipelines;
pub mod registry;
pub mod report;

use std::path::{Path, PathBuf};

use config::RunConfig;
use registry::Pipeline;
use report::Report;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Applies command-line overrides, evaluates the pipeline and writes the
/// report and artifacts into the output directory.
pub fn run(mut cfg: RunConfig, pipeline: Option<&str>, out: Option<&Path>) -> Result<Report, CliError> {
    if let Some(p) = pipeline {
        cfg.pipeline = p.to_string();
    }
    if let Some(o) = out {
        cfg.output_dir = o.to_path_buf();
    }
    cfg.validate()?;
    let pipeline: Pipeline = cfg.pipeline()?;
    let (outcomes, artifacts) = pipelines::evaluate(&cfg, pipeline)?;
    let report = Report {
        pipeline,
        passed: outcomes.iter().all(|o| !o.failed()),
        checks: outcomes,
        artifacts: artifacts.iter().map(|a| a.name.clone()).collect(),
        config: cfg,
    };
    write_outputs(&report, &artifacts)?;
    Ok(report)
}

fn write_outputs(report: &Report, artifacts: &[pipelines::Artifact]) -> Result<(), CliError> {
    let dir = &report.config.output_dir;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for a in artifacts {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.contents).map_err(io(&path))?;
    }
    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&path, json + "\n").map_err(io(&path))?;
    Ok(())
}
