//! Evaluation of the registered checks on one configured solution.
//!
//! Intermediate objects (frames, eigenfunction products, the Killing field,
//! the spectral curve) are computed on first use and shared between checks;
//! the wall time of a check includes whatever it had to build.

use std::cell::OnceCell;
use std::fmt::{Display, Write};
use std::time::Instant;

use cmc_core::algebra::{Grid, Mat2};
use cmc_core::baker_akhiezer::{
    dual_from_sigma_star, eigen_products, p_matrix_and_residues, psi_residual, solve_pair, solve_psi, BAFunction,
    EigenProducts, PsiOptions, PuiseuxOptions,
};
use cmc_core::frames::{
    build_alpha, conformality_residual, discrete_mean_curvature, frenet_residuals, integrate_frame,
    mean_curvature_relation_check, sym_bobenko, unitarity_defect, ConnectionForm, FrameOptions, Immersion,
};
use cmc_core::hierarchy::{generating_identity_check, jacobi_symbolic, series_match, Hierarchy, SeriesMatch};
use cmc_core::jacobi::{
    check_identities_iv_v, homogeneous_from_products, homogeneous_residuals, inhomogeneous_build, jacobi_operator,
    killing_from_isometry, udot_routes, InhomogeneousJacobi, JacobiData, SymContext,
};
use cmc_core::sinh_gordon::{residual, SinhGordonSolution};
use cmc_core::spectral::{
    curve_from_killing, default_condition_samples, det_sweep, dp_expansion, eigenvector_residual, integrate_killing,
    isospectral_generator, loglog_slope, motion_order, nonisospectral_generator, one_dimensional_potential,
    psi_variation_fd, rank_one_defect, root_motion, u_dot_point, vacuum_potential, verify_curve_conditions,
    CurveConditions, MonodromyOptions, PolynomialKillingField, SpectralCurve, SpectralError,
};
use cmc_core::Complex64;

use crate::config::{RunConfig, SolutionSpec};
use crate::export;
use crate::registry::{self, Pipeline, Relation};
use crate::report::{Outcome, Status};
use crate::CliError;

/// Homogeneous change of the mean curvature used for the inhomogeneous field.
pub const H_DOT: f64 = 0.1;
/// Deformation parameters of the finite-difference ψ check.
pub const FD_STEPS: [f64; 4] = [0.08, 0.04, 0.02, 0.01];
/// Deformation parameters of the branch-point motion sweeps.
pub const SWEEP: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];
/// Relative size of `u̇` below which the deformation is trivial.
const UDOT_FLOOR: f64 = 1e-10;
/// Below this the strip derivative is compared absolutely.
const RESIDUE_FLOOR: f64 = 1e-8;

const GOLDEN: [(&str, &str); 8] = [
    ("omega_1", include_str!("../../core/golden/hierarchy/omega_1.txt")),
    ("omega_2", include_str!("../../core/golden/hierarchy/omega_2.txt")),
    ("omega_3", include_str!("../../core/golden/hierarchy/omega_3.txt")),
    ("omega_4", include_str!("../../core/golden/hierarchy/omega_4.txt")),
    ("phi_1", include_str!("../../core/golden/hierarchy/phi_1.txt")),
    ("phi_2", include_str!("../../core/golden/hierarchy/phi_2.txt")),
    ("phi_3", include_str!("../../core/golden/hierarchy/phi_3.txt")),
    ("phi_4", include_str!("../../core/golden/hierarchy/phi_4.txt")),
];

/// A file written next to the report.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

enum Measure {
    Value(f64),
    NotApplicable(String),
}

use Measure::{NotApplicable, Value};

type Eval = Result<Measure, String>;

fn err(e: impl Display) -> String {
    e.to_string()
}

fn cached<T>(cell: &OnceCell<T>, init: impl FnOnce() -> Result<T, String>) -> Result<&T, String> {
    if let Some(v) = cell.get() {
        return Ok(v);
    }
    let v = init()?;
    Ok(cell.get_or_init(|| v))
}

struct Products {
    psi: BAFunction,
    products: EigenProducts,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    sol: SinhGordonSolution,
    alpha: ConnectionForm,
    ctx: SymContext,
    immersion: OnceCell<Immersion>,
    products: OnceCell<Products>,
    jacobi: OnceCell<JacobiData>,
    inhomogeneous: OnceCell<InhomogeneousJacobi>,
    strip: OnceCell<SinhGordonSolution>,
    series: OnceCell<SeriesMatch>,
    killing: OnceCell<PolynomialKillingField>,
    curve: OnceCell<Result<SpectralCurve, SpectralError>>,
    conditions: OnceCell<CurveConditions>,
    varied: OnceCell<BAFunction>,
    outcomes: Vec<Outcome>,
    artifacts: Vec<Artifact>,
}

/// Runs every check of `pipeline` in registry order.
pub fn evaluate(cfg: &RunConfig, pipeline: Pipeline) -> Result<(Vec<Outcome>, Vec<Artifact>), CliError> {
    let sol = cfg.solution()?;
    let (l0, l1) = cfg.sym();
    let ctx = SymContext::new(l0, l1).map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
    let mut r = Runner {
        cfg,
        alpha: build_alpha(&sol),
        sol,
        ctx,
        immersion: OnceCell::new(),
        products: OnceCell::new(),
        jacobi: OnceCell::new(),
        inhomogeneous: OnceCell::new(),
        strip: OnceCell::new(),
        series: OnceCell::new(),
        killing: OnceCell::new(),
        curve: OnceCell::new(),
        conditions: OnceCell::new(),
        varied: OnceCell::new(),
        outcomes: Vec::new(),
        artifacts: Vec::new(),
    };
    for stage in pipeline.stages() {
        match stage {
            Pipeline::Surface => r.surface(),
            Pipeline::Jacobi => r.jacobi(),
            Pipeline::Hierarchy => r.hierarchy(),
            Pipeline::Spectral => r.spectral(),
            Pipeline::VerifyAll => unreachable!("verify-all is not a stage"),
        }
    }
    Ok((r.outcomes, r.artifacts))
}

impl Runner<'_> {
    fn check(&mut self, name: &'static str, eval: impl FnOnce(&Self) -> Eval) {
        let spec = registry::find(name).expect("check is registered");
        let tolerance = self.cfg.tolerance(name).unwrap_or(spec.tolerance);
        let start = Instant::now();
        let result = eval(self);
        let wall_time_s = start.elapsed().as_secs_f64();
        let (measured, status, note) = match result {
            Ok(Value(v)) if v.is_finite() => {
                let status = if spec.relation.holds(v, tolerance) { Status::Pass } else { Status::Fail };
                (Some(v), status, None)
            }
            // An unbounded order means the quantity never left the round-off floor.
            Ok(Value(v)) if v == f64::INFINITY && spec.relation == Relation::AtLeast => {
                (None, Status::Pass, Some("unbounded: no motion above round-off".into()))
            }
            Ok(Value(v)) => (None, Status::Error, Some(format!("non-finite measurement {v}"))),
            Ok(NotApplicable(why)) => (None, Status::NotApplicable, Some(why)),
            Err(e) => (None, Status::Error, Some(e)),
        };
        self.outcomes.push(Outcome {
            name,
            pipeline: spec.pipeline,
            anchor: spec.anchor,
            relation: spec.relation,
            tolerance,
            measured,
            status,
            note,
            wall_time_s,
        });
    }

    fn immersion(&self) -> Result<&Immersion, String> {
        cached(&self.immersion, || {
            let (l0, l1) = self.cfg.sym();
            let f0 = integrate_frame(&self.alpha, l0).map_err(err)?;
            let f1 = integrate_frame(&self.alpha, l1).map_err(err)?;
            sym_bobenko(&f0, &f1, &self.alpha).map_err(err)
        })
    }

    fn products(&self) -> Result<&Products, String> {
        cached(&self.products, || {
            let a = self.cfg.spectral_samples()[0];
            let (psi, partner) = solve_pair(&self.sol, a, PsiOptions::default()).map_err(err)?;
            let products = eigen_products(&psi, &dual_from_sigma_star(&partner)).map_err(err)?;
            Ok(Products { psi, products })
        })
    }

    fn jacobi_data(&self) -> Result<&JacobiData, String> {
        cached(&self.jacobi, || homogeneous_from_products(&self.products()?.products, self.ctx, &self.sol).map_err(err))
    }

    fn inhomogeneous(&self) -> Result<&InhomogeneousJacobi, String> {
        cached(&self.inhomogeneous, || inhomogeneous_build(&self.sol, self.ctx, H_DOT).map_err(err))
    }

    /// A thin strip open in x for the Puiseux fits, which need `λ` near 0
    /// and ∞ where multipliers over a full period would overflow.
    fn strip(&self) -> Result<&SinhGordonSolution, String> {
        cached(&self.strip, || {
            let n = 64;
            let grid = Grid::new(n, 8, 2.0 / n as f64, 0.025, Complex64::new(0.0, 0.0), [false, true]).map_err(err)?;
            self.cfg.solution_on(grid).map_err(err)
        })
    }

    fn killing(&self) -> Result<&PolynomialKillingField, String> {
        cached(&self.killing, || {
            let xi0 = match self.cfg.solution {
                SolutionSpec::Vacuum => {
                    let one = Complex64::new(1.0, 0.0);
                    vacuum_potential(&[one, -one]).map_err(err)?
                }
                SolutionSpec::OneDimensional { u0, du0 } => one_dimensional_potential(u0, du0),
            };
            integrate_killing(&xi0, &self.alpha).map_err(err)
        })
    }

    /// The spectral curve, or the reason the curve checks do not apply.
    fn curve(&self) -> Result<Result<&SpectralCurve, String>, String> {
        let pkf = self.killing()?;
        let curve = self.curve.get_or_init(|| curve_from_killing(pkf, self.cfg.sym()));
        match curve {
            Ok(c) => Ok(Ok(c)),
            Err(e @ SpectralError::DegenerateCurve { .. }) => Ok(Err(e.to_string())),
            Err(e) => Err(err(e)),
        }
    }

    fn conditions(&self) -> Result<&CurveConditions, String> {
        cached(&self.conditions, || {
            verify_curve_conditions(
                self.cfg.sym(),
                &self.alpha,
                &default_condition_samples(),
                &MonodromyOptions::default(),
            )
            .map_err(err)
        })
    }

    fn varied(&self) -> Result<&BAFunction, String> {
        cached(&self.varied, || {
            let lam = self.cfg.spectral_samples()[1];
            solve_psi(&self.sol, lam, [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]).map_err(err)
        })
    }

    fn surface(&mut self) {
        self.check("sinh-gordon-residual", |r| Ok(Value(r.sol.residual_max)));
        self.check("flatness", |r| {
            let (l0, l1) = r.cfg.sym();
            let mut worst = 0.0f64;
            for lam in r.cfg.spectral_samples().into_iter().chain([l0, l1]) {
                worst = worst.max(r.alpha.flatness_residual(lam).map_err(err)?.max_abs());
            }
            Ok(Value(worst))
        });
        self.check("unitarity", |r| Ok(Value(unitarity_defect(&r.immersion()?.f))));
        self.check("conformality", |r| Ok(Value(conformality_residual(r.immersion()?).map_err(err)?)));
        self.check("hopf-identity", |r| Ok(Value(r.immersion()?.useful_identity_defect())));
        self.check("discrete-mean-curvature", |r| {
            let imm = r.immersion()?;
            let (h, _) = discrete_mean_curvature(imm);
            Ok(Value((h - imm.h).abs()))
        });
        self.check("frenet", |r| Ok(Value(frenet_residuals(r.immersion()?).map_err(err)?.max())));
        self.check("harmonic-map", |r| {
            let imm = r.immersion()?;
            Ok(Value(mean_curvature_relation_check(imm, imm.h).map_err(err)?))
        });
        if let Some(imm) = self.immersion.get() {
            let obj = export::obj(&imm.f);
            push(&mut self.artifacts, "surface.obj", obj);
        }
        if let Ok(res) = residual(&self.sol) {
            push(&mut self.artifacts, "sinh_gordon_residual.csv", export::csv(&res, |v| v.norm()));
        }
        if let Ok(flat) = self.alpha.flatness_residual(self.cfg.spectral_samples()[0]) {
            push(&mut self.artifacts, "flatness_residual.csv", export::csv(&flat, |m: Mat2| m.max_abs()));
        }
    }

    fn jacobi(&mut self) {
        self.check("psi-residual", |r| Ok(Value(psi_residual(&r.products()?.psi, &r.sol).map_err(err)?)));
        self.check("pairing-constant", |r| Ok(Value(r.products()?.products.y_spread)));
        self.check("homogeneous-jacobi", |r| {
            Ok(Value(homogeneous_residuals(r.jacobi_data()?, &r.sol).map_err(err)?.jacobi))
        });
        self.check("udot-routes", |r| Ok(Value(udot_routes(r.jacobi_data()?, &r.sol).map_err(err)?.disagreement)));
        self.check("identities-iv-v", |r| {
            Ok(Value(check_identities_iv_v(&r.jacobi_data()?.normalized(), &r.sol).map_err(err)?.max()))
        });
        self.check("killing-criterion", |r| {
            let k = killing_from_isometry(Mat2::zero(), Mat2::epsilon(), r.immersion()?).map_err(err)?;
            Ok(Value(k.udot_max))
        });
        self.check("inhomogeneous-jacobi", |r| Ok(Value(r.inhomogeneous()?.residual)));
        let worst = |r: &Runner, pick: fn(&cmc_core::jacobi::DefectRow) -> f64| -> Eval {
            let rows = &r.inhomogeneous()?.period_defects;
            Ok(Value(rows.iter().map(pick).fold(0.0, f64::max)))
        };
        self.check("tau-minus-period", |r| worst(r, |d| d.error[1]));
        self.check("sigma-plus-period", |r| worst(r, |d| d.error[2]));
        self.check("sigma-minus-period", |r| worst(r, |d| d.sigma_minus_flipped_error));
        self.check("residues", |r| {
            let strip = r.strip()?;
            let est = p_matrix_and_residues(strip, &PuiseuxOptions::default()).map_err(err)?;
            let exact = strip.u.dz().map_err(err)?;
            let diff = est.du.zip(&exact, |p, q| p - q).max_abs_interior(2);
            let scale = exact.max_abs_interior(2);
            Ok(Value(if scale > RESIDUE_FLOOR { diff / scale } else { diff }))
        });
        if let Some(jd) = self.jacobi.get() {
            if let Ok(res) = jacobi_operator(&jd.omega, &self.sol, 0.0) {
                push(&mut self.artifacts, "jacobi_residual.csv", export::csv(&res, |v| v.norm()));
            }
            push(&mut self.artifacts, "omega.csv", export::csv(&jd.omega, |v| v.re));
        }
        if let Some(inh) = self.inhomogeneous.get() {
            let table = defect_table(inh, self.cfg.delta_sign.factor());
            push(&mut self.artifacts, "period_defects.csv", table);
        }
    }

    fn hierarchy(&mut self) {
        self.check("hierarchy-golden", |_| {
            let h = Hierarchy::generate(4).map_err(err)?;
            let mismatches = GOLDEN
                .iter()
                .filter(|(name, text)| {
                    let n: usize = name[name.len() - 1..].parse().expect("golden names end in a digit");
                    let p = if name.starts_with("omega") { &h.omega[n] } else { &h.phi[n] };
                    p.to_string() != text.trim()
                })
                .count();
            Ok(Value(mismatches as f64))
        });
        self.check("generating-identity", |_| {
            let res = generating_identity_check(4).map_err(err)?;
            Ok(Value(res.iter().map(|p| p.len()).sum::<usize>() as f64))
        });
        self.check("symbolic-jacobi", |_| {
            let h = Hierarchy::generate(4).map_err(err)?;
            let mut bad = 0;
            for w in &h.omega[1..=4] {
                if !jacobi_symbolic(w).map_err(err)?.is_zero() {
                    bad += 1;
                }
            }
            Ok(Value(bad as f64))
        });
        self.check("series-cross-check", |r| {
            let strip = r.strip()?;
            let m = cached(&r.series, || series_match(strip, &PuiseuxOptions::default(), 2).map_err(err))?;
            Ok(Value(m.max_error()))
        });
        if let Ok(h) = Hierarchy::generate(4) {
            let mut text = String::new();
            for n in 1..=4 {
                let _ = writeln!(text, "omega_{n} = {}", h.omega[n]);
                let _ = writeln!(text, "phi_{n} = {}", h.phi[n]);
            }
            push(&mut self.artifacts, "hierarchy.txt", text);
        }
        if let Some(m) = self.series.get() {
            let mut csv = String::from("at,family,n,error,scale\n");
            for row in &m.rows {
                let _ = writeln!(csv, "{:?},{:?},{},{},{}", row.at, row.family, row.n, row.error, row.scale);
            }
            push(&mut self.artifacts, "series.csv", csv);
        }
    }

    fn spectral(&mut self) {
        self.check("killing-det", |r| Ok(Value(r.killing()?.report.det_spread)));
        self.check("killing-route", |r| {
            Ok(match r.killing()?.report.route_defect {
                Some(d) => Value(d),
                None => NotApplicable("no second route on this grid".into()),
            })
        });
        self.check("killing-reality", |r| Ok(Value(r.killing()?.report.reality_drift)));
        self.check("eigenvector", |r| {
            Ok(Value(eigenvector_residual(r.killing()?, &r.products()?.psi).map_err(err)?.residual))
        });
        self.check("curve-symmetry", |r| Ok(r.curve()?.map_or_else(NotApplicable, |c| Value(c.symmetry_defect))));
        self.check("curve-positivity", |r| Ok(r.curve()?.map_or_else(NotApplicable, |c| Value(c.positivity_min))));
        self.check("condition-sym-points", |r| {
            if r.immersion()?.f.periodic != [true, true] {
                return Ok(NotApplicable("the surface does not close on this torus".into()));
            }
            Ok(Value(r.conditions()?.sym_point_defect))
        });
        self.check("condition-sigma", |r| Ok(Value(r.conditions()?.sigma_defect)));
        self.check("condition-involution", |r| Ok(Value(r.conditions()?.involution_defect)));
        self.check("condition-singular-part", |r| Ok(Value(r.conditions()?.singular_det.norm())));
        let dp = |r: &Runner, minus: bool| -> Eval {
            let dp = dp_expansion(&r.sol, &MonodromyOptions::default()).map_err(err)?;
            Ok(Value(if minus { dp.error_minus_1() } else { dp.error_plus_1() }))
        };
        self.check("dp-minus", |r| dp(r, true));
        self.check("dp-plus", |r| dp(r, false));
        self.check("psi-variation-rank-one", |r| {
            Ok(Value(rank_one_defect(&r.products()?.products, r.varied()?).map_err(err)?))
        });
        self.check("psi-variation-slope", |r| {
            let p = &r.products()?.products;
            // With u̇ ≡ 0 the perturbed system is the base one and the finite
            // difference is exact, so there is no first-order error to measure.
            let (mut udot, mut size) = (0.0f64, 0.0f64);
            for k in 0..r.sol.grid().len() {
                let xi = Mat2::new(p.xi11.values[k], p.xi12.values[k], p.xi21.values[k], p.xi22.values[k]);
                udot = udot.max(u_dot_point(p.lambda, r.sol.u.values[k], xi).0.norm());
                size = size.max(xi.max_abs());
            }
            if udot <= UDOT_FLOOR * size {
                return Ok(NotApplicable(format!("u̇ vanishes for these products (max {udot:.1e})")));
            }
            let errs = psi_variation_fd(&r.sol, p, r.varied()?, &FD_STEPS, FrameOptions::default()).map_err(err)?;
            Ok(Value(loglog_slope(&errs)))
        });
        self.check("isospectral-order", |r| {
            let (pkf, curve) = match r.curve()? {
                Ok(c) => (r.killing()?, c),
                Err(why) => return Ok(NotApplicable(why)),
            };
            let roots = curve.all_branch_points();
            let mut worst = f64::INFINITY;
            for &a in &roots {
                let gen = isospectral_generator(pkf, a).map_err(err)?;
                for line in det_sweep(&pkf.xi0, &gen.xi_dot[0], &roots, &SWEEP).map_err(err)? {
                    worst = worst.min(motion_order(&line));
                }
            }
            Ok(Value(worst))
        });
        let nonisospectral = |r: &Runner, anchor: bool| -> Eval {
            let (pkf, curve) = match r.curve()? {
                Ok(c) => (r.killing()?, c),
                Err(why) => return Ok(NotApplicable(why)),
            };
            let roots = curve.all_branch_points();
            // Anchor slopes: the one farthest from 1; others: the smallest.
            let mut anchor_slope = 1.0f64;
            let mut others = f64::INFINITY;
            for (idx, &a) in roots.iter().enumerate() {
                let gen = nonisospectral_generator(pkf, curve, a).map_err(err)?;
                let motion = root_motion(&pkf.xi0, &gen.xi_dot[0], &roots, &SWEEP).map_err(err)?;
                for (k, line) in motion.iter().enumerate() {
                    let s = motion_order(line);
                    if k == idx {
                        if (s - 1.0).abs() > (anchor_slope - 1.0).abs() {
                            anchor_slope = s;
                        }
                    } else {
                        others = others.min(s);
                    }
                }
            }
            Ok(Value(if anchor { anchor_slope } else { others }))
        };
        self.check("nonisospectral-anchor", |r| nonisospectral(r, true));
        self.check("nonisospectral-others", |r| nonisospectral(r, false));
        if let Some(pkf) = self.killing.get() {
            let lam = self.cfg.spectral_samples()[0];
            if let (Ok(base), true) = (pkf.eval(0, lam), !pkf.is_empty()) {
                let det0 = base.det();
                let field = cmc_core::algebra::Field::from_fn(self.sol.grid(), |_, i, j| {
                    let k = self.sol.grid().idx(i, j);
                    pkf.eval(k, lam).map(|m| m.det() - det0).unwrap_or(Complex64::new(f64::NAN, 0.0))
                });
                push(&mut self.artifacts, "killing_det_drift.csv", export::csv(&field, |v| v.norm()));
            }
        }
        if let Some(Ok(curve)) = self.curve.get() {
            let mut csv = String::from("re,im\n");
            for b in curve.all_branch_points() {
                let _ = writeln!(csv, "{},{}", b.re, b.im);
            }
            push(&mut self.artifacts, "branch_points.csv", csv);
        }
    }
}

fn push(list: &mut Vec<Artifact>, name: &str, contents: String) {
    list.push(Artifact { name: name.into(), contents });
}

/// Period defects with `Δ_γ` oriented by `sign` (+1: translate − identity).
fn defect_table(inh: &InhomogeneousJacobi, sign: f64) -> String {
    let mut out = String::from("axis,entry,measured_re,measured_im,predicted_re,predicted_im,error\n");
    for row in &inh.period_defects {
        for (k, entry) in ["tau_plus", "tau_minus", "sigma_plus", "sigma_minus"].iter().enumerate() {
            let (m, p) = (row.measured[k] * sign, row.predicted[k] * sign);
            let _ = writeln!(out, "{},{entry},{},{},{},{},{}", row.axis, m.re, m.im, p.re, p.im, row.error[k]);
        }
    }
    out
}
