//! Check outcomes and the JSON run report.

use serde::Serialize;

use crate::config::RunConfig;
use crate::registry::{CheckSpec, Pipeline, Relation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    /// The check does not apply to this configuration (reason in `note`).
    NotApplicable,
    /// The computation behind the check failed (message in `note`).
    Error,
}

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub name: &'static str,
    pub pipeline: Pipeline,
    pub anchor: &'static str,
    pub relation: Relation,
    pub tolerance: f64,
    pub measured: Option<f64>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub wall_time_s: f64,
}

impl Outcome {
    pub fn failed(&self) -> bool {
        matches!(self.status, Status::Fail | Status::Error)
    }

    pub fn spec(&self) -> CheckSpec {
        *crate::registry::find(self.name).expect("outcomes come from the registry")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub pipeline: Pipeline,
    pub config: RunConfig,
    pub passed: bool,
    pub checks: Vec<Outcome>,
    pub artifacts: Vec<String>,
}

impl Report {
    pub fn failures(&self) -> impl Iterator<Item = &Outcome> {
        self.checks.iter().filter(|c| c.failed())
    }
}
