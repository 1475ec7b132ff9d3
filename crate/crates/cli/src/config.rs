//! Run configuration: which solution, on which grid, with which Sym points,
//! spectral samples and tolerances.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use cmc_core::algebra::Grid;
use cmc_core::sinh_gordon::{one_dimensional, period_of, vacuum, SinhGordonSolution};
use cmc_core::Complex64;
use serde::{Deserialize, Serialize};

use crate::registry::{self, Pipeline};
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolutionSpec {
    Vacuum,
    OneDimensional { u0: f64, du0: f64 },
}

/// Doubly periodic grid; an omitted extent defaults to `2π` for the vacuum and
/// to the pendulum period (x) and `2` (y) for a one-dimensional solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    #[serde(default)]
    pub lx: Option<f64>,
    #[serde(default)]
    pub ly: Option<f64>,
}

/// Orientation of the period difference `Δ_γ` in the defect tables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaSign {
    #[default]
    TranslateMinusIdentity,
    IdentityMinusTranslate,
}

impl DeltaSign {
    pub fn factor(self) -> f64 {
        match self {
            Self::TranslateMinusIdentity => 1.0,
            Self::IdentityMinusTranslate => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub solution: SolutionSpec,
    pub grid: GridSpec,
    /// Sym points as fractions of a full turn, `λ = e^{2πi·t}`.
    pub sym_points: [f64; 2],
    /// Spectral samples `[re, im]`: the anchor of the eigenfunction products
    /// first, then the parameter of the varied eigenfunction.
    pub lambdas: Vec<[f64; 2]>,
    #[serde(default = "default_pipeline")]
    pub pipeline: String,
    /// Per-check tolerance overrides.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub delta_sign: DeltaSign,
}

fn default_pipeline() -> String {
    "verify-all".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::ConfigInvalid(m));
        for t in self.sym_points {
            if !(0.0..1.0).contains(&t) {
                return bad(format!("Sym point fraction {t} is outside [0, 1)"));
            }
        }
        if self.sym_points[0] == self.sym_points[1] {
            return bad("the two Sym points coincide".into());
        }
        if self.lambdas.len() < 2 {
            return bad(format!("{} spectral samples given, 2 needed", self.lambdas.len()));
        }
        let ls = self.spectral_samples();
        if ls.iter().any(|l| !l.is_finite() || l.norm() == 0.0) {
            return bad("spectral samples must be finite and nonzero".into());
        }
        if (ls[0] - ls[1]).norm() == 0.0 {
            return bad("the varied eigenfunction needs a parameter different from the anchor".into());
        }
        for (name, tol) in &self.tolerances {
            if !(tol.is_finite() && *tol > 0.0) {
                return bad(format!("tolerance for {name} must be positive, got {tol}"));
            }
            if registry::find(name).is_none() {
                return bad(format!("unknown check {name}"));
            }
        }
        if self.grid.nx < Grid::MIN_POINTS || self.grid.ny < Grid::MIN_POINTS {
            return bad(format!(
                "grid {}×{} is below {} points per axis",
                self.grid.nx,
                self.grid.ny,
                Grid::MIN_POINTS
            ));
        }
        for l in [self.grid.lx, self.grid.ly].into_iter().flatten() {
            if !(l.is_finite() && l > 0.0) {
                return bad(format!("grid extent {l} must be positive"));
            }
        }
        if let SolutionSpec::OneDimensional { u0, du0 } = self.solution {
            if !(u0.is_finite() && du0.is_finite()) {
                return bad("initial data must be finite".into());
            }
            if self.grid.lx.is_none() && period_of(u0, du0).is_none() {
                return bad(format!("({u0}, {du0}) is the rest point; give grid.lx explicitly"));
            }
        }
        self.pipeline()?;
        Ok(())
    }

    pub fn pipeline(&self) -> Result<Pipeline, CliError> {
        Pipeline::parse(&self.pipeline)
            .ok_or_else(|| CliError::ConfigInvalid(format!("unknown pipeline {}", self.pipeline)))
    }

    pub fn sym(&self) -> (Complex64, Complex64) {
        let at = |t: f64| Complex64::from_polar(1.0, 2.0 * PI * t);
        (at(self.sym_points[0]), at(self.sym_points[1]))
    }

    pub fn spectral_samples(&self) -> Vec<Complex64> {
        self.lambdas.iter().map(|l| Complex64::new(l[0], l[1])).collect()
    }

    pub fn tolerance(&self, name: &str) -> Option<f64> {
        self.tolerances.get(name).copied()
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        let (lx, ly) = match self.solution {
            SolutionSpec::Vacuum => (self.grid.lx.unwrap_or(2.0 * PI), self.grid.ly.unwrap_or(2.0 * PI)),
            SolutionSpec::OneDimensional { u0, du0 } => {
                let t = self.grid.lx.or_else(|| period_of(u0, du0));
                (t.ok_or_else(|| CliError::ConfigInvalid("no period".into()))?, self.grid.ly.unwrap_or(2.0))
            }
        };
        Grid::periodic(self.grid.nx, self.grid.ny, lx, ly).map_err(|e| CliError::ConfigInvalid(e.to_string()))
    }

    pub fn solution(&self) -> Result<SinhGordonSolution, CliError> {
        self.solution_on(self.grid()?)
    }

    pub fn solution_on(&self, grid: Grid) -> Result<SinhGordonSolution, CliError> {
        match self.solution {
            SolutionSpec::Vacuum => Ok(vacuum(grid)),
            SolutionSpec::OneDimensional { u0, du0 } => {
                one_dimensional(grid, u0, du0).map_err(|e| CliError::ConfigInvalid(e.to_string()))
            }
        }
    }
}
