//! Polynomial Killing fields `dξ = [ξ, α]`, the spectral curve read off from
//! `det ξ`, the monodromy conditions on that curve, the differentials `dp±`,
//! the first variation of the eigenfunction and the isospectral and
//! non-isospectral deformation generators at branch points.
//!
//! Killing fields are stored unshifted: the value at `z` is the Laurent
//! polynomial `F⁻¹ξ₀F` with exponents `−1…g`. The factor `λ^{−l}` is a scalar
//! and only enters through [`shift_factor`] where a skew-hermitian value on
//! the unit circle is needed.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::{fit_series, shift_factor, AlgebraError, Grid, LoopMatrix, Mat2, ScalarField, SeriesFit};
use crate::baker_akhiezer::{solve_fundamental, BAFunction, BakerAkhiezerError, EigenProducts};
use crate::frames::{
    integrate_frame_with, integrate_line, Action, ConnectionForm, FrameError, FrameOptions, LineOptions, Renorm,
};
use crate::hierarchy::ExpansionPoint;
use crate::sinh_gordon::SinhGordonSolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("initial potential is not in Λ_g: {reason}")]
    BadPotential { reason: String },
    #[error("potential is not a polynomial Killing field of this connection (out-of-band leakage {leakage:e})")]
    NotPolynomial { leakage: f64 },
    #[error("det ξ varies by {spread:e} across the grid")]
    DetNotConstant { spread: f64 },
    #[error("spectral curve is degenerate: branch points {distance:e} apart or on the unit circle")]
    DegenerateCurve { distance: f64 },
    #[error("roots of det ξ are not closed under λ ↦ 1/λ̄ (defect {defect:e})")]
    AsymmetricRoots { defect: f64 },
    #[error("{got} spectral samples given, at least {need} needed")]
    InsufficientSamples { got: usize, need: usize },
    #[error("both monodromies are needed; the grid is not doubly periodic")]
    NotDoublyPeriodic,
    #[error("the two periods are real multiples of each other")]
    PeriodsDegenerate,
    #[error("least-squares fit is ill-conditioned (cond = {condition:e})")]
    FitIllConditioned { condition: f64 },
    #[error("the spectral parameter equals the anchor point {0}")]
    LambdaEqualsAnchor(Complex64),
    #[error("|det ξ({at})| = {det:e} is not zero; not a branch point")]
    NotBranchPoint { at: Complex64, det: f64 },
    #[error("another branch point lies {distance:e} from the anchor")]
    CurveTooDegenerate { distance: f64 },
    #[error("root tracking lost root {index} (collision with a neighbour)")]
    RootCollision { index: usize },
    #[error("inputs live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    BakerAkhiezer(#[from] BakerAkhiezerError),
    #[error(transparent)]
    Algebra(AlgebraError),
}

impl From<AlgebraError> for SpectralError {
    fn from(e: AlgebraError) -> Self {
        match e {
            AlgebraError::FitIllConditioned { condition } => Self::FitIllConditioned { condition },
            other => Self::Algebra(other),
        }
    }
}

type Result<T> = std::result::Result<T, SpectralError>;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Tolerance of the `Λ_g` membership tests on the initial potential.
pub const POTENTIAL_TOL: f64 = 1e-12;
/// Largest accepted out-of-band coefficient of the Lax flow, relative to `|ξ₀|`.
pub const LEAKAGE_TOL: f64 = 1e-6;
/// Spread of `det ξ` accepted when extracting the curve, relative to `|ξ₀|²`.
pub const DET_SPREAD_TOL: f64 = 1e-8;
/// Smallest separation of distinct branch points.
pub const DISTINCT_TOL: f64 = 1e-8;
/// Branch points this close to the unit circle coincide with their mirror.
pub const CIRCLE_TOL: f64 = 1e-6;
/// `|det ξ(a)|` below which `a` counts as a branch point, relative to `|ξ₀|²`.
pub const BRANCH_TOL: f64 = 1e-8;
/// Smallest distance from the anchor to the other branch points.
pub const ANCHOR_SEPARATION: f64 = 1e-4;
/// Step in the local parameter `y`, `λ − a = y²`.
pub const CURVE_DELTA: f64 = 1e-3;
/// Unit-circle samples of the `det ξ` spread.
pub const DET_SAMPLES: usize = 16;
/// Angles of the unit-circle samples where the Lax and conjugation routes are compared.
pub const ROUTE_ANGLES: [f64; 4] = [0.4, 1.7, 3.0, 4.6];
/// Unit-circle samples of the positivity check of `a(λ)`.
pub const POSITIVITY_SAMPLES: usize = 32;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn unit(theta: f64) -> Complex64 {
    Complex64::from_polar(1.0, theta)
}

fn e11() -> Mat2 {
    Mat2::diag(ONE, ZERO)
}

fn e22() -> Mat2 {
    Mat2::diag(ZERO, ONE)
}

fn e21() -> Mat2 {
    Mat2::new(ZERO, ZERO, ONE, ZERO)
}

/// Hermitian Frobenius pairing `Σ conj(a_k) b_k`.
fn frobenius(a: &Mat2, b: &Mat2) -> Complex64 {
    a.entries().iter().zip(b.entries()).map(|(x, y)| x.conj() * y).sum()
}

// ---------------------------------------------------------------------------
// Potentials
// ---------------------------------------------------------------------------

/// Checks `ξ₀ ∈ Λ_g` (lowest coefficient `υ`, reality, traceless) and returns `g`.
pub fn potential_genus(xi0: &LoopMatrix) -> Result<u32> {
    let bad = |reason: String| Err(SpectralError::BadPotential { reason });
    if xi0.j_min != -1 || xi0.coeffs.is_empty() {
        return bad(format!("lowest exponent is {}, expected −1", xi0.j_min));
    }
    if xi0.coeffs.iter().any(|m| !m.is_finite()) {
        return bad("non-finite coefficient".into());
    }
    let genus = xi0.j_max().max(0) as u32;
    let scale = xi0.max_abs().max(1.0);
    let lead = (xi0.coeffs[0] - Mat2::upsilon()).max_abs();
    if lead > POTENTIAL_TOL {
        return bad(format!("λ⁻¹ coefficient differs from υ by {lead:e}"));
    }
    let trace = xi0.coeffs.iter().map(|m| m.trace().norm()).fold(0.0, f64::max);
    if trace > POTENTIAL_TOL * scale {
        return bad(format!("trace {trace:e}"));
    }
    let reality = xi0.reality_defect(genus);
    if reality > POTENTIAL_TOL * scale {
        return bad(format!("reality defect {reality:e}"));
    }
    Ok(genus)
}

/// `ξ₀ = p(λ)·(λ⁻¹υ + E₂₁)`, the polynomial Killing fields of the vacuum. The
/// coefficients must satisfy `p₀ = 1` and `p_k = −conj(p_{g−k})`.
pub fn vacuum_potential(p: &[Complex64]) -> Result<LoopMatrix> {
    if p.is_empty() {
        return Err(SpectralError::BadPotential { reason: "empty polynomial".into() });
    }
    let g = p.len() - 1;
    let mut coeffs = vec![Mat2::zero(); g + 2];
    for (k, pk) in p.iter().enumerate() {
        coeffs[k] += Mat2::upsilon() * *pk;
        coeffs[k + 1] += e21() * *pk;
    }
    let xi0 = LoopMatrix::new(-1, coeffs);
    potential_genus(&xi0)?;
    Ok(xi0)
}

/// The genus-one potential of the solution depending on `x` only with
/// `u(z₀) = u0`, `u'(z₀) = du0`: `ξ₀ = −2e^{−u₀}·α(∂y)|_{z₀}`. Its branch points are
/// `E ∓ √(E² − 1)` with `E = ½du0² + cosh 2u0`.
pub fn one_dimensional_potential(u0: f64, du0: f64) -> LoopMatrix {
    let (ep, em) = (u0.exp(), (-u0).exp());
    let s = -em;
    let c_m1 = Mat2::new(ZERO, c(-ep * s, 0.0), ZERO, ZERO);
    let c_0 = Mat2::new(c(0.0, du0 * s), c(em * s, 0.0), c(-em * s, 0.0), c(0.0, -du0 * s));
    let c_1 = Mat2::new(ZERO, ZERO, c(ep * s, 0.0), ZERO);
    LoopMatrix::new(-1, vec![c_m1, c_0, c_1])
}

// ---------------------------------------------------------------------------
// Killing fields
// ---------------------------------------------------------------------------

/// Measured invariants of an integrated Killing field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KillingReport {
    /// `max |det ξ(z)(λ) − det ξ₀(λ)|` over the grid and [`DET_SAMPLES`] unit-circle λ's.
    pub det_spread: f64,
    /// Largest reality defect of `ξ(z)`.
    pub reality_drift: f64,
    pub trace_max: f64,
    /// Largest coefficient the Lax flow pushes outside the exponents `−1…g`.
    pub leakage: f64,
    /// Largest difference to `F⁻¹ξ₀F` at the [`ROUTE_ANGLES`].
    pub route_defect: Option<f64>,
    /// `|ξ(z₀ + γ) − ξ₀|` over the periodic axes.
    pub periodicity_defect: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PolynomialKillingField {
    pub genus: u32,
    pub xi0: LoopMatrix,
    /// `None` for a bare potential that was not integrated.
    pub grid: Option<Grid>,
    /// Unshifted `ξ(z)` at each grid node (a single value for a bare potential).
    pub values: Vec<LoopMatrix>,
    pub report: KillingReport,
}

impl PolynomialKillingField {
    /// A potential without a connection; curve extraction and the deformation
    /// generators then act at `z₀` only.
    pub fn from_potential(xi0: LoopMatrix) -> Result<Self> {
        let genus = potential_genus(&xi0)?;
        let report = KillingReport {
            det_spread: 0.0,
            reality_drift: xi0.reality_defect(genus),
            trace_max: xi0.coeffs.iter().map(|m| m.trace().norm()).fold(0.0, f64::max),
            leakage: 0.0,
            route_defect: None,
            periodicity_defect: None,
        };
        Ok(Self { genus, values: vec![xi0.clone()], xi0, grid: None, report })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Unshifted `ξ(z_k)(λ)`.
    pub fn eval(&self, k: usize, lambda: Complex64) -> Result<Mat2> {
        Ok(self.values[k].eval(lambda)?)
    }

    /// `λ^{−l}ξ(z_k)(λ)`, skew-hermitian on the unit circle.
    pub fn eval_shifted(&self, k: usize, lambda: Complex64) -> Result<Mat2> {
        Ok(self.values[k].eval(lambda)? * shift_factor(self.genus, lambda)?)
    }
}

/// Coefficients `(λ⁻¹, λ⁰, λ¹)` of `α(∂x)` and `α(∂y)`.
fn cartesian_coeffs(p: &crate::frames::PointConnection) -> ([Mat2; 3], [Mat2; 3]) {
    let a = [0, 1, 2].map(|k| p.dz[k] + p.dzbar[k]);
    let b = [0, 1, 2].map(|k| (p.dz[k] - p.dzbar[k]) * I);
    (a, b)
}

/// `[ξ, G]` coefficientwise within the band of `ξ`, and the largest term that
/// falls outside it.
fn lax_rhs(xi: &[Mat2], gen: &[Mat2; 3]) -> (Vec<Mat2>, f64) {
    let n = xi.len();
    let mut out = vec![Mat2::zero(); n];
    let mut leak = 0.0f64;
    for (p, x) in xi.iter().enumerate() {
        for (k, g) in gen.iter().enumerate() {
            let term = x.commutator(g);
            // Exponent shift of the generator coefficient is k − 1.
            let q = p as isize + k as isize - 1;
            if q < 0 || q >= n as isize {
                leak = leak.max(term.max_abs());
            } else {
                out[q as usize] += term;
            }
        }
    }
    (out, leak)
}

fn axpy(x: &[Mat2], k: &[Mat2], s: f64) -> Vec<Mat2> {
    x.iter().zip(k).map(|(a, b)| *a + *b * s).collect()
}

/// RK4 for the Lax equation along one grid line.
fn lax_line(
    start: &[Mat2],
    cells: usize,
    h: f64,
    substeps: usize,
    generator: impl Fn(f64) -> [Mat2; 3],
) -> (Vec<Vec<Mat2>>, f64) {
    let s = substeps.max(1);
    let dt = h / s as f64;
    let mut x = start.to_vec();
    let mut out = Vec::with_capacity(cells + 1);
    out.push(x.clone());
    let mut leak = 0.0f64;
    for cell in 0..cells {
        for sub in 0..s {
            let t0 = cell as f64 + sub as f64 / s as f64;
            let half = 0.5 / s as f64;
            let (g0, g1, g2) = (generator(t0), generator(t0 + half), generator(t0 + 2.0 * half));
            let (k1, l1) = lax_rhs(&x, &g0);
            let (k2, l2) = lax_rhs(&axpy(&x, &k1, 0.5 * dt), &g1);
            let (k3, l3) = lax_rhs(&axpy(&x, &k2, 0.5 * dt), &g1);
            let (k4, l4) = lax_rhs(&axpy(&x, &k3, dt), &g2);
            leak = leak.max(l1).max(l2).max(l3).max(l4);
            for (i, v) in x.iter_mut().enumerate() {
                *v += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
            }
        }
        out.push(x.clone());
    }
    (out, leak)
}

pub fn integrate_killing(xi0: &LoopMatrix, alpha: &ConnectionForm) -> Result<PolynomialKillingField> {
    integrate_killing_with(xi0, alpha, FrameOptions::default())
}

/// Coefficientwise RK4 of `dξ = [ξ, α]` from an arbitrary loop on the
/// exponents of `start`, along the base column and then every row. Returns
/// the values at every node and the largest out-of-band term.
pub fn integrate_lax(start: &LoopMatrix, alpha: &ConnectionForm, opts: FrameOptions) -> (Vec<LoopMatrix>, f64) {
    let (values, _, _, leak) = lax_grid(start, alpha, opts);
    (values, leak)
}

type LaxGrid = (Vec<LoopMatrix>, Vec<Vec<Mat2>>, Vec<Vec<Mat2>>, f64);

fn lax_grid(start: &LoopMatrix, alpha: &ConnectionForm, opts: FrameOptions) -> LaxGrid {
    let g = alpha.grid();
    let cells_x = if g.periodic[0] { g.nx } else { g.nx - 1 };
    let cells_y = if g.periodic[1] { g.ny } else { g.ny - 1 };
    let gen_x = |x: f64, j: usize| cartesian_coeffs(&alpha.along_row(x, j)).0;
    let gen_y = |i: usize, y: f64| cartesian_coeffs(&alpha.along_column(i, y)).1;
    let (col, mut leak) = lax_line(&start.coeffs, cells_y, g.hy, opts.substeps, |t| gen_y(0, t));
    let rows: Vec<(Vec<Vec<Mat2>>, f64)> =
        (0..g.ny).into_par_iter().map(|j| lax_line(&col[j], cells_x, g.hx, opts.substeps, |t| gen_x(t, j))).collect();
    let mut values = vec![LoopMatrix::zero(start.j_min, start.coeffs.len()); g.len()];
    for (j, (row, l)) in rows.iter().enumerate() {
        leak = leak.max(*l);
        for i in 0..g.nx {
            values[g.idx(i, j)] = LoopMatrix::new(start.j_min, row[i].clone());
        }
    }
    let first_row = rows.into_iter().next().map(|r| r.0).unwrap_or_default();
    (values, col, first_row, leak)
}

/// [`integrate_lax`] from `ξ₀ ∈ Λ_g` with the invariants measured. The
/// conjugation route `F⁻¹ξ₀F` is evaluated at [`ROUTE_ANGLES`] as a cross-check.
pub fn integrate_killing_with(
    xi0: &LoopMatrix,
    alpha: &ConnectionForm,
    opts: FrameOptions,
) -> Result<PolynomialKillingField> {
    let genus = potential_genus(xi0)?;
    let g = alpha.grid();
    let scale = xi0.max_abs().max(1.0);
    let (values, col, first_row, leak) = lax_grid(xi0, alpha, opts);
    if leak > LEAKAGE_TOL * scale {
        return Err(SpectralError::NotPolynomial { leakage: leak });
    }
    let mut periodicity: Option<f64> = None;
    let diff = |a: &[Mat2]| a.iter().zip(&xi0.coeffs).map(|(p, q)| (*p - *q).max_abs()).fold(0.0, f64::max);
    if g.periodic[0] {
        periodicity = Some(diff(&first_row[g.nx]));
    }
    if g.periodic[1] {
        let d = diff(&col[g.ny]);
        periodicity = Some(periodicity.map_or(d, |p| p.max(d)));
    }

    let samples: Vec<(Complex64, Complex64)> = (0..DET_SAMPLES)
        .map(|m| {
            let lam = unit(2.0 * PI * (m as f64 + 0.5) / DET_SAMPLES as f64);
            xi0.eval(lam).map(|x| (lam, x.det()))
        })
        .collect::<std::result::Result<_, _>>()?;
    let det_spread = values
        .par_iter()
        .map(|v| {
            samples
                .iter()
                .map(|(lam, d0)| v.eval(*lam).map(|x| (x.det() - d0).norm()).unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let reality_drift = values.par_iter().map(|v| v.reality_defect(genus)).reduce(|| 0.0, f64::max);
    let trace_max = values
        .par_iter()
        .map(|v| v.coeffs.iter().map(|m| m.trace().norm()).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max);

    let mut route = 0.0f64;
    for theta in ROUTE_ANGLES {
        let lam = unit(theta);
        let frame = integrate_frame_with(alpha, lam, opts)?;
        let x0 = xi0.eval(lam)?;
        let worst = (0..g.len())
            .into_par_iter()
            .map(|k| {
                let f = frame.frame.values[k];
                let conj = f.inverse().map(|fi| fi * x0 * f);
                match (conj, values[k].eval(lam)) {
                    (Some(a), Ok(b)) => (a - b).max_abs(),
                    _ => f64::INFINITY,
                }
            })
            .reduce(|| 0.0, f64::max);
        route = route.max(worst);
    }

    Ok(PolynomialKillingField {
        genus,
        xi0: xi0.clone(),
        grid: Some(g),
        values,
        report: KillingReport {
            det_spread,
            reality_drift,
            trace_max,
            leakage: leak,
            route_defect: Some(route),
            periodicity_defect: periodicity,
        },
    })
}

/// `ξ(z)ᵗψ(z) = νψ(z)` for the eigenfunction of the transposed system, with
/// `ν` read off at `z₀`; `ν² = −det ξ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenvectorCheck {
    pub nu: Complex64,
    /// `max |ξᵗψ − νψ| / |ψ|` over the grid.
    pub residual: f64,
    /// `|ν² + det ξ₀(λ)|`.
    pub nu_defect: f64,
}

pub fn eigenvector_residual(pkf: &PolynomialKillingField, psi: &BAFunction) -> Result<EigenvectorCheck> {
    if pkf.grid != Some(psi.grid()) {
        return Err(SpectralError::GridMismatch);
    }
    let lam = psi.lambda;
    let at = |k: usize| [psi.psi1.values[k], psi.psi2.values[k]];
    let x0 = pkf.eval(0, lam)?.transpose();
    let v0 = at(0);
    let w0 = x0.apply(v0);
    let nu = (v0[0].conj() * w0[0] + v0[1].conj() * w0[1]) / (v0[0].norm_sqr() + v0[1].norm_sqr());
    let residual = (0..pkf.len())
        .into_par_iter()
        .map(|k| {
            let v = at(k);
            let w = pkf.values[k].eval(lam).map(|x| x.transpose().apply(v));
            match w {
                Ok(w) => {
                    let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt().max(1e-300);
                    (w[0] - nu * v[0]).norm().max((w[1] - nu * v[1]).norm()) / n
                }
                Err(_) => f64::INFINITY,
            }
        })
        .reduce(|| 0.0, f64::max);
    let nu_defect = (nu * nu + pkf.xi0.eval(lam)?.det()).norm();
    Ok(EigenvectorCheck { nu, residual, nu_defect })
}

// ---------------------------------------------------------------------------
// Spectral curve
// ---------------------------------------------------------------------------

/// `ν` on the `+` sheet at a unit-circle sample, continued along the circle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SheetSample {
    pub lambda: Complex64,
    pub nu: Complex64,
}

#[derive(Clone, Debug)]
pub struct SpectralCurve {
    pub genus: u32,
    /// Branch points inside the unit disc, ordered by modulus then argument.
    pub branch_points: Vec<Complex64>,
    /// The root of `det ξ` paired with each branch point, close to `1/ᾱ`.
    pub mirrors: Vec<Complex64>,
    /// Laurent coefficients of `a(λ) = Π(λ − α_i)(λ⁻¹ − ᾱ_i)` from `λ^{−g}` to `λ^g`.
    pub a_coeffs: Vec<Complex64>,
    /// `κ` with `λ^{−2l}det ξ₀ = κ·a(λ)`; real and positive for a valid curve.
    pub scale: Complex64,
    /// Coefficients of `λ·det ξ₀` from `λ⁰` to `λ^{2g}`, fitted from unit-circle samples.
    pub poly: Vec<Complex64>,
    /// Fitted `λ^{2g+1}` coefficient, zero in theory.
    pub top_coefficient: f64,
    pub fit_residual: f64,
    pub sym: (Complex64, Complex64),
    pub sheets: Vec<SheetSample>,
    pub min_separation: f64,
    /// `max |mirror − 1/ᾱ|`.
    pub symmetry_defect: f64,
    /// `min a(λ)` over [`POSITIVITY_SAMPLES`] unit-circle points.
    pub positivity_min: f64,
    /// Largest `|Im a(λ)|` and largest mismatch `|λ^{−2l}det ξ₀/κ − a|` on those points.
    pub positivity_imag: f64,
    pub a_consistency: f64,
}

impl SpectralCurve {
    pub fn a(&self, lambda: Complex64) -> Complex64 {
        let g = self.genus as i32;
        self.a_coeffs.iter().enumerate().map(|(k, v)| *v * lambda.powi(k as i32 - g)).sum()
    }

    /// `ν² = −κ·a(λ)`.
    pub fn nu_squared(&self, lambda: Complex64) -> Complex64 {
        -self.scale * self.a(lambda)
    }

    /// Branch points followed by their mirrors.
    pub fn all_branch_points(&self) -> Vec<Complex64> {
        self.branch_points.iter().chain(&self.mirrors).copied().collect()
    }
}

fn horner(p: &[Complex64], x: Complex64) -> Complex64 {
    p.iter().rev().fold(ZERO, |acc, c| acc * x + c)
}

fn horner_deriv(p: &[Complex64], x: Complex64) -> Complex64 {
    p.iter().enumerate().skip(1).rev().fold(ZERO, |acc, (k, c)| acc * x + *c * k as f64)
}

/// Roots of `Σ p_k x^k` (leading coefficient nonzero) from the companion
/// matrix, polished by Newton steps.
pub fn polynomial_roots(p: &[Complex64]) -> Vec<Complex64> {
    let n = p.len().saturating_sub(1);
    if n == 0 {
        return Vec::new();
    }
    let lead = p[n];
    let companion = DMatrix::from_fn(n, n, |r, col| {
        if r == 0 {
            -p[n - 1 - col] / lead
        } else if r == col + 1 {
            ONE
        } else {
            ZERO
        }
    });
    let eig = companion.clone().schur().eigenvalues().unwrap_or_else(|| companion.diagonal());
    eig.iter()
        .map(|&r0| {
            let mut r = r0;
            for _ in 0..8 {
                let d = horner_deriv(p, r);
                if d.norm() == 0.0 {
                    break;
                }
                let step = horner(p, r) / d;
                if !step.is_finite() {
                    break;
                }
                r -= step;
                if step.norm() <= 1e-16 * r.norm().max(1.0) {
                    break;
                }
            }
            if horner(p, r).norm() <= horner(p, r0).norm() {
                r
            } else {
                r0
            }
        })
        .collect()
}

fn min_pairwise(points: &[Complex64]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.min((p - q).norm());
        }
    }
    best
}

/// Spectral curve of `ξ₀`: `λ·det ξ₀` is fitted from `2g + 3` unit-circle
/// samples, its roots paired under `λ ↦ 1/λ̄`, and `ν` continued along the
/// unit circle.
pub fn curve_from_killing(pkf: &PolynomialKillingField, sym: (Complex64, Complex64)) -> Result<SpectralCurve> {
    let g = pkf.genus as usize;
    let xi0 = &pkf.xi0;
    let scale = xi0.max_abs().max(1.0);
    if pkf.report.det_spread > DET_SPREAD_TOL * scale * scale {
        return Err(SpectralError::DetNotConstant { spread: pkf.report.det_spread });
    }
    let n = 2 * g + 3;
    let params: Vec<Complex64> = (0..n).map(|m| unit(2.0 * PI * m as f64 / n as f64 + 0.1)).collect();
    let values: Vec<Complex64> =
        params.iter().map(|l| xi0.eval(*l).map(|x| x.det() * l)).collect::<std::result::Result<_, _>>()?;
    let powers: Vec<i32> = (0..=(2 * g as i32 + 1)).collect();
    let fit: SeriesFit = fit_series(&params, &values, &powers)?;
    let top_coefficient = fit.coeffs[2 * g + 1].norm();
    let poly: Vec<Complex64> = fit.coeffs[..=2 * g].to_vec();
    let lead = poly[2 * g];
    if lead.norm() <= DISTINCT_TOL * scale * scale || poly[0].norm() <= DISTINCT_TOL * scale * scale {
        return Err(SpectralError::DegenerateCurve { distance: 0.0 });
    }
    let roots = polynomial_roots(&poly);
    let min_separation = min_pairwise(&roots);
    if min_separation < DISTINCT_TOL {
        return Err(SpectralError::DegenerateCurve { distance: min_separation });
    }
    if let Some(r) = roots.iter().find(|r| (r.norm() - 1.0).abs() < CIRCLE_TOL) {
        return Err(SpectralError::DegenerateCurve { distance: (r.norm() - 1.0).abs() });
    }
    let mut inside: Vec<Complex64> = roots.iter().copied().filter(|r| r.norm() < 1.0).collect();
    let mut outside: Vec<Complex64> = roots.iter().copied().filter(|r| r.norm() > 1.0).collect();
    if inside.len() != g || outside.len() != g {
        return Err(SpectralError::AsymmetricRoots { defect: f64::INFINITY });
    }
    inside.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.arg().total_cmp(&b.arg())));
    let mut mirrors = Vec::with_capacity(g);
    let mut symmetry_defect = 0.0f64;
    for a in &inside {
        let target = a.conj().inv();
        let (k, d) = outside
            .iter()
            .enumerate()
            .map(|(k, r)| (k, (r - target).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("one outside root per branch point");
        symmetry_defect = symmetry_defect.max(d / target.norm().max(1.0));
        mirrors.push(outside.remove(k));
    }
    if symmetry_defect > 1e-6 {
        return Err(SpectralError::AsymmetricRoots { defect: symmetry_defect });
    }

    // a(λ) = Π (−α_i λ⁻¹ + (1 + |α_i|²) − ᾱ_i λ).
    let mut a_coeffs = vec![ONE];
    for a in &inside {
        let factor = [-*a, c(1.0 + a.norm_sqr(), 0.0), -a.conj()];
        let mut next = vec![ZERO; a_coeffs.len() + 2];
        for (p, x) in a_coeffs.iter().enumerate() {
            for (q, y) in factor.iter().enumerate() {
                next[p + q] += x * y;
            }
        }
        a_coeffs = next;
    }
    // λ^{−g}·λ·det ξ₀ = lead·Π(λ − α_i)(λ − 1/ᾱ_i)·λ^{−g} = κ·a(λ).
    let kappa = inside.iter().fold(lead, |acc, a| acc * (-a.conj().inv()));

    let mut curve = SpectralCurve {
        genus: pkf.genus,
        branch_points: inside,
        mirrors,
        a_coeffs,
        scale: kappa,
        poly,
        top_coefficient,
        fit_residual: fit.residual,
        sym,
        sheets: Vec::new(),
        min_separation,
        symmetry_defect,
        positivity_min: f64::INFINITY,
        positivity_imag: 0.0,
        a_consistency: 0.0,
    };
    let mut prev: Option<Complex64> = None;
    for m in 0..POSITIVITY_SAMPLES {
        let lam = unit(2.0 * PI * m as f64 / POSITIVITY_SAMPLES as f64);
        let a = curve.a(lam);
        let direct = xi0.eval(lam)?.det() * shift_factor(pkf.genus, lam)?.powi(2);
        curve.positivity_min = curve.positivity_min.min(a.re);
        curve.positivity_imag = curve.positivity_imag.max(a.im.abs());
        curve.a_consistency = curve.a_consistency.max((direct / kappa - a).norm() / a.norm().max(1e-300));
        let root = (-direct).sqrt();
        let nu = match prev {
            Some(p) if (root + p).norm() < (root - p).norm() => -root,
            _ => root,
        };
        prev = Some(nu);
        curve.sheets.push(SheetSample { lambda: lam, nu });
    }
    Ok(curve)
}

// ---------------------------------------------------------------------------
// Monodromy
// ---------------------------------------------------------------------------

/// Options for monodromies along the base lines and for fitting `ln μ`.
#[derive(Clone, Debug, PartialEq)]
pub struct MonodromyOptions {
    /// RK4 steps per grid cell along the base row and column.
    pub substeps: usize,
    /// Moduli of the local parameter (`λ^{1/2}` at 0, `λ^{−1/2}` at ∞).
    pub radii: Vec<f64>,
    /// Arguments of `λ` (at 0) or `λ⁻¹` (at ∞), away from the cut.
    pub angles: Vec<f64>,
    pub powers: Vec<i32>,
}

impl Default for MonodromyOptions {
    fn default() -> Self {
        Self {
            substeps: 64,
            radii: vec![0.2, 0.15, 0.1, 0.07],
            angles: vec![-0.75 * PI, -0.25 * PI, 0.25 * PI, 0.75 * PI],
            powers: vec![-1, 0, 1, 2, 3, 4, 5],
        }
    }
}

/// `F(z₀ + γ_axis)` at `λ`, integrated along the base row (axis 0) or column
/// (axis 1) in the balanced gauge.
pub fn monodromy(alpha: &ConnectionForm, lambda: Complex64, axis: usize, substeps: usize) -> Result<Option<Mat2>> {
    if lambda.norm() == 0.0 {
        return Err(SpectralError::Frame(FrameError::LambdaZero));
    }
    let g = alpha.grid();
    if !g.periodic[axis] {
        return Ok(None);
    }
    let d = lambda.powf(0.25);
    let (dm, dinv) = (Mat2::diag(d.inv(), d), Mat2::diag(d, d.inv()));
    let on_circle = (lambda.norm() - 1.0).abs() < 1e-12;
    // Off the circle the entries grow like e^{|γ|/|λ|^{1/2}} and fixing the
    // determinant by cancellation would destroy them, so nothing is renormalised.
    let line = LineOptions { substeps, renorm: if on_circle { Renorm::Unitary } else { Renorm::None }, every: 16 };
    let (values, _) = if axis == 0 {
        integrate_line(Mat2::identity(), g.nx, g.hx, line, Action::Right, |t| {
            dinv * alpha.along_row(t, 0).cartesian(lambda).0 * dm
        })?
    } else {
        integrate_line(Mat2::identity(), g.ny, g.hy, line, Action::Right, |t| {
            dinv * alpha.along_column(0, t).cartesian(lambda).1 * dm
        })?
    };
    Ok(Some(dm * values[values.len() - 1] * dinv))
}

/// `ln μ` on the plane-wave branch: the eigenvalue of the monodromy closest to
/// `exp((i/2)(λ^{−1/2}γ + λ^{1/2}γ̄))`, with the logarithm continued from the
/// plane-wave exponent.
fn plane_wave_log(m: Mat2, lambda: Complex64, gamma: Complex64) -> Complex64 {
    let s = lambda.sqrt();
    let exponent = I * 0.5 * (gamma / s + s * gamma.conj());
    let target = exponent.exp();
    // The small eigenvalue of a fast-growing monodromy is taken as the
    // reciprocal of the large one; its direct value is lost to cancellation.
    let (p, q) = m.eigenvalues();
    let big = if p.norm() >= q.norm() { p } else { q };
    let d = |mu: Complex64| (mu / target).ln().norm();
    let mu = if d(big) <= d(big.inv()) { big } else { big.inv() };
    exponent + (mu / target).ln()
}

/// Fits of `ln μ_k` in the local parameter at `λ = 0` (`s = λ^{1/2}`) or
/// `λ = ∞` (`r = λ^{−1/2}`), one per periodic axis.
pub fn log_multiplier_fits(
    alpha: &ConnectionForm,
    at: ExpansionPoint,
    opts: &MonodromyOptions,
) -> Result<[Option<SeriesFit>; 2]> {
    let g = alpha.grid();
    let periods = g.periods();
    let mut params = Vec::new();
    let mut lambdas = Vec::new();
    for &r in &opts.radii {
        for &theta in &opts.angles {
            // Local parameter with argument θ/2 on the principal branch.
            let t = Complex64::from_polar(r, 0.5 * theta);
            let lam = match at {
                ExpansionPoint::Zero => t * t,
                ExpansionPoint::Infinity => (t * t).inv(),
            };
            params.push(t);
            lambdas.push(lam);
        }
    }
    let mut out: [Option<SeriesFit>; 2] = [None, None];
    for axis in 0..2 {
        let Some(gamma) = periods[axis] else { continue };
        let logs: Vec<Complex64> = lambdas
            .par_iter()
            .map(|&lam| -> Result<Complex64> {
                let m = monodromy(alpha, lam, axis, opts.substeps)?.ok_or(SpectralError::NotDoublyPeriodic)?;
                Ok(plane_wave_log(m, lam, gamma))
            })
            .collect::<Result<_>>()?;
        out[axis] = Some(fit_series(&params, &logs, &opts.powers)?);
    }
    Ok(out)
}

/// Monodromy conditions of the spectral curve on a doubly periodic surface.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveConditions {
    /// Largest distance of a multiplier at the Sym points to `{±1}`.
    pub sym_point_defect: f64,
    /// `max |μ₊μ₋ − 1|` over the samples (`σ*μ = μ⁻¹`).
    pub sigma_defect: f64,
    /// Eigenvalues at `1/λ̄` against the conjugate eigenvalues at `λ`, and
    /// `|μ| = 1` on the unit circle, relative to `|μ|`.
    pub involution_defect: f64,
    /// `[[a₁(0), a₁(∞)], [a₂(0), a₂(∞)]]`, the `t⁻¹` coefficients of `ln μ_k`
    /// in the local parameter at each puncture.
    pub singular_parts: [[Complex64; 2]; 2],
    pub singular_det: Complex64,
    /// Distance of the singular parts to the plane-wave values `(i/2)γ_k`, `(i/2)γ̄_k`.
    pub singular_plane_wave_defect: f64,
    /// Existence of the fixed-point-free involution on the abstract curve.
    pub condition_one: &'static str,
}

/// Samples used by [`verify_curve_conditions`] when none are given: four off
/// the unit circle and four on it.
pub fn default_condition_samples() -> Vec<Complex64> {
    let mut s: Vec<Complex64> = [0.3, 1.9, 3.5, 5.1].iter().map(|t| Complex64::from_polar(0.6, *t)).collect();
    s.extend([0.7, 2.3, 3.9, 5.5].iter().map(|t| unit(*t)));
    s
}

/// Conditions on the monodromy of a doubly periodic surface with Sym points
/// `sym`. The curve itself need not be smooth (the vacuum has double points).
pub fn verify_curve_conditions(
    sym: (Complex64, Complex64),
    alpha: &ConnectionForm,
    samples: &[Complex64],
    opts: &MonodromyOptions,
) -> Result<CurveConditions> {
    let g = alpha.grid();
    let periods = g.periods();
    let (Some(g1), Some(g2)) = (periods[0], periods[1]) else {
        return Err(SpectralError::NotDoublyPeriodic);
    };
    let off = samples.iter().filter(|l| (l.norm() - 1.0).abs() > 1e-9).count();
    if samples.len() < 4 || off < 2 {
        return Err(SpectralError::InsufficientSamples { got: samples.len(), need: 4 });
    }
    let both = |lam: Complex64| -> Result<[Mat2; 2]> {
        let m0 = monodromy(alpha, lam, 0, opts.substeps)?.ok_or(SpectralError::NotDoublyPeriodic)?;
        let m1 = monodromy(alpha, lam, 1, opts.substeps)?.ok_or(SpectralError::NotDoublyPeriodic)?;
        Ok([m0, m1])
    };
    let mut sym_point_defect = 0.0f64;
    for lam in [sym.0, sym.1] {
        for m in both(lam)? {
            let (p, q) = m.eigenvalues();
            for mu in [p, q] {
                sym_point_defect = sym_point_defect.max((mu - 1.0).norm().min((mu + 1.0).norm()));
            }
        }
    }
    let mut sigma_defect = 0.0f64;
    let mut involution_defect = 0.0f64;
    for &lam in samples {
        let here = both(lam)?;
        let on_circle = (lam.norm() - 1.0).abs() <= 1e-9;
        let there = if on_circle { None } else { Some(both(lam.conj().inv())?) };
        for axis in 0..2 {
            let (p, q) = here[axis].eigenvalues();
            sigma_defect = sigma_defect.max((p * q - 1.0).norm());
            let size = p.norm().max(q.norm()).max(1.0);
            match &there {
                None => {
                    involution_defect = involution_defect.max((p.norm() - 1.0).abs()).max((q.norm() - 1.0).abs());
                }
                Some(t) => {
                    let (r, s) = t[axis].eigenvalues();
                    let (pc, qc) = (p.conj(), q.conj());
                    let straight = (r - pc).norm().max((s - qc).norm());
                    let crossed = (r - qc).norm().max((s - pc).norm());
                    involution_defect = involution_defect.max(straight.min(crossed) / size);
                }
            }
        }
    }
    let zero = log_multiplier_fits(alpha, ExpansionPoint::Zero, opts)?;
    let inf = log_multiplier_fits(alpha, ExpansionPoint::Infinity, opts)?;
    let lead = |f: &Option<SeriesFit>| f.as_ref().and_then(|f| f.coeff(-1)).unwrap_or(ZERO);
    let singular_parts = [[lead(&zero[0]), lead(&inf[0])], [lead(&zero[1]), lead(&inf[1])]];
    let singular_det = singular_parts[0][0] * singular_parts[1][1] - singular_parts[0][1] * singular_parts[1][0];
    let expected = [[I * 0.5 * g1, I * 0.5 * g1.conj()], [I * 0.5 * g2, I * 0.5 * g2.conj()]];
    let mut singular_plane_wave_defect = 0.0f64;
    for r in 0..2 {
        for k in 0..2 {
            singular_plane_wave_defect = singular_plane_wave_defect.max((singular_parts[r][k] - expected[r][k]).norm());
        }
    }
    Ok(CurveConditions {
        sym_point_defect,
        sigma_defect,
        involution_defect,
        singular_parts,
        singular_det,
        singular_plane_wave_defect,
        condition_one: "structural: implied by the root symmetry λ ↦ 1/λ̄",
    })
}

// ---------------------------------------------------------------------------
// dp±
// ---------------------------------------------------------------------------

/// Coefficients of `p± = ∫dp±` in `s = λ^{1/2}` from `ln μ_k = γ_k p⁺ + γ̄_k p⁻`,
/// with their grid-average predictions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpExpansion {
    /// `s⁻¹` coefficient of `p⁺`; `i/2` for every solution. The differential
    /// `dp⁺ = ds·(−p⁺₋₁ s⁻² + p⁺₁ + …)` carries `−i/2`.
    pub p_plus_m1: Complex64,
    /// `s⁻¹` coefficient of `p⁻`, zero in theory.
    pub p_minus_m1: Complex64,
    pub p_plus_1: Complex64,
    pub p_minus_1: Complex64,
    /// `−i⟨(∂u)²⟩`.
    pub expected_plus_1: Complex64,
    /// `(i/2)⟨cosh 2u⟩`.
    pub expected_minus_1: Complex64,
    pub condition: f64,
    /// Largest fitted `s⁰` coefficient of `ln μ_k`, zero on the plane-wave branch.
    pub constant_term: f64,
}

impl DpExpansion {
    /// `|fit − expected|`, relative when the expected value is nonzero.
    pub fn error_plus_1(&self) -> f64 {
        relative(self.p_plus_1, self.expected_plus_1)
    }

    pub fn error_minus_1(&self) -> f64 {
        relative(self.p_minus_1, self.expected_minus_1)
    }

    pub fn error_leading(&self) -> f64 {
        relative(self.p_plus_m1, I * 0.5).max(self.p_minus_m1.norm())
    }
}

fn relative(fit: Complex64, expected: Complex64) -> f64 {
    let d = (fit - expected).norm();
    if expected.norm() > 1e-12 {
        d / expected.norm()
    } else {
        d
    }
}

pub fn dp_expansion(sol: &SinhGordonSolution, opts: &MonodromyOptions) -> Result<DpExpansion> {
    let alpha = crate::frames::build_alpha(sol);
    let periods = sol.grid().periods();
    let (Some(g1), Some(g2)) = (periods[0], periods[1]) else {
        return Err(SpectralError::NotDoublyPeriodic);
    };
    let det = g1 * g2.conj() - g1.conj() * g2;
    if det.norm() <= 1e-12 * g1.norm() * g2.norm() {
        return Err(SpectralError::PeriodsDegenerate);
    }
    let fits = log_multiplier_fits(&alpha, ExpansionPoint::Zero, opts)?;
    let (Some(f1), Some(f2)) = (&fits[0], &fits[1]) else {
        return Err(SpectralError::NotDoublyPeriodic);
    };
    let coeff = |f: &SeriesFit, p: i32| f.coeff(p).unwrap_or(ZERO);
    // [γ₁ γ̄₁; γ₂ γ̄₂]·(p⁺, p⁻) = (a₁, a₂).
    let solve = |a1: Complex64, a2: Complex64| {
        let plus = (a1 * g2.conj() - g1.conj() * a2) / det;
        let minus = (g1 * a2 - g2 * a1) / det;
        (plus, minus)
    };
    let (p_plus_m1, p_minus_m1) = solve(coeff(f1, -1), coeff(f2, -1));
    let (p_plus_1, p_minus_1) = solve(coeff(f1, 1), coeff(f2, 1));
    let du2 = sol.u_z.map(|v| v * v).mean();
    let cosh = sol.u.map(|u| (u * 2.0).cosh()).mean();
    Ok(DpExpansion {
        p_plus_m1,
        p_minus_m1,
        p_plus_1,
        p_minus_1,
        expected_plus_1: -I * du2,
        expected_minus_1: I * 0.5 * cosh,
        condition: f1.condition.max(f2.condition),
        constant_term: coeff(f1, 0).norm().max(coeff(f2, 0).norm()),
    })
}

// ---------------------------------------------------------------------------
// Variation of ψ
// ---------------------------------------------------------------------------

/// `(λ − a)⁻¹·[[(λ+a)ξ₁₁, 2λξ₁₂], [2aξ₂₁, (λ+a)ξ₂₂]]·ψ`.
pub fn psi_dot_point(lambda: Complex64, a: Complex64, xi: Mat2, psi: [Complex64; 2]) -> [Complex64; 2] {
    let k = Mat2::new((lambda + a) * xi.a, lambda * 2.0 * xi.b, a * 2.0 * xi.c, (lambda + a) * xi.d);
    let w = k.apply(psi);
    let s = (lambda - a).inv();
    [w[0] * s, w[1] * s]
}

/// `(λ − a)⁻¹·(diag(λ, a)Q + Q·diag(a, λ))·ψ`.
pub fn psi_dot_rank_one(lambda: Complex64, a: Complex64, q: Mat2, psi: [Complex64; 2]) -> [Complex64; 2] {
    let k = deformation_matrix(lambda, a, q);
    let w = k.apply(psi);
    let s = (lambda - a).inv();
    [w[0] * s, w[1] * s]
}

fn deformation_matrix(lambda: Complex64, a: Complex64, q: Mat2) -> Mat2 {
    Mat2::diag(lambda, a) * q + q * Mat2::diag(a, lambda)
}

fn products_at(p: &EigenProducts, k: usize) -> Mat2 {
    Mat2::new(p.xi11.values[k], p.xi12.values[k], p.xi21.values[k], p.xi22.values[k])
}

/// `ψ̇` on the grid.
#[derive(Clone, Debug)]
pub struct PsiVariation {
    pub lambda: Complex64,
    pub anchor: Complex64,
    pub psi_dot1: ScalarField,
    pub psi_dot2: ScalarField,
}

fn check_anchor(lambda: Complex64, a: Complex64) -> Result<()> {
    if (lambda - a).norm() <= 1e-12 * a.norm().max(1.0) {
        return Err(SpectralError::LambdaEqualsAnchor(a));
    }
    Ok(())
}

pub fn vary_psi(products: &EigenProducts, psi: &BAFunction) -> Result<PsiVariation> {
    let (lambda, a) = (psi.lambda, products.lambda);
    check_anchor(lambda, a)?;
    if products.grid() != psi.grid() {
        return Err(SpectralError::GridMismatch);
    }
    let dot: Vec<[Complex64; 2]> = (0..psi.grid().len())
        .into_par_iter()
        .map(|k| psi_dot_point(lambda, a, products_at(products, k), [psi.psi1.values[k], psi.psi2.values[k]]))
        .collect();
    let field = |i: usize| ScalarField::new(psi.grid(), dot.iter().map(|v| v[i]).collect()).aperiodic();
    Ok(PsiVariation { lambda, anchor: a, psi_dot1: field(0), psi_dot2: field(1) })
}

/// Largest pointwise difference between the matrix form of `ψ̇` and the
/// rank-one rewriting with `Q = (ξ_ij)`, relative to `|ξ||ψ|`.
pub fn rank_one_defect(products: &EigenProducts, psi: &BAFunction) -> Result<f64> {
    let (lambda, a) = (psi.lambda, products.lambda);
    check_anchor(lambda, a)?;
    Ok((0..psi.grid().len())
        .into_par_iter()
        .map(|k| {
            let xi = products_at(products, k);
            let v = [psi.psi1.values[k], psi.psi2.values[k]];
            let p = psi_dot_point(lambda, a, xi, v);
            let q = psi_dot_rank_one(lambda, a, xi, v);
            let size = (xi.max_abs() * v[0].norm().max(v[1].norm())).max(1e-300);
            (p[0] - q[0]).norm().max((p[1] - q[1]).norm()) / size
        })
        .reduce(|| 0.0, f64::max))
}

/// `(u̇, ∂u̇, ∂̄u̇)` with `u̇ = ξ₁₁ − ξ₂₂`, `∂u̇ = ie^{−u}ξ₂₁ − ia⁻¹e^uξ₁₂`,
/// `∂̄u̇ = iae^uξ₂₁ − ie^{−u}ξ₁₂`.
pub fn u_dot_point(a: Complex64, u: Complex64, xi: Mat2) -> (Complex64, Complex64, Complex64) {
    let (ep, em) = (u.exp(), (-u).exp());
    (xi.a - xi.d, I * em * xi.c - I * ep * xi.b / a, I * a * ep * xi.c - I * em * xi.b)
}

/// Residual of the linearised system `∂ψ̇ = Uᵗψ̇ + U̇ᵗψ`, `∂̄ψ̇ = Vᵗψ̇ + V̇ᵗψ`
/// at one point, given the derivatives of `ψ̇`.
#[allow(clippy::too_many_arguments)]
pub fn linearized_defect_point(
    lambda: Complex64,
    a: Complex64,
    u: (Complex64, Complex64, Complex64),
    xi: Mat2,
    psi: [Complex64; 2],
    psi_dot_z: [Complex64; 2],
    psi_dot_zbar: [Complex64; 2],
) -> f64 {
    let (uu, uz, uzb) = u;
    let pc = crate::frames::PointConnection::new(uu, uz, uzb);
    let (um, vm) = pc.wirtinger(lambda);
    let (udot, dudot, dbudot) = u_dot_point(a, uu, xi);
    let (ep, em) = (uu.exp(), (-uu).exp());
    let u_var = Mat2::new(dudot * 0.5, I * ep * udot * 0.5 / lambda, -I * em * udot * 0.5, -dudot * 0.5);
    let v_var = Mat2::new(-dbudot * 0.5, -I * em * udot * 0.5, I * lambda * ep * udot * 0.5, dbudot * 0.5);
    let pd = psi_dot_point(lambda, a, xi, psi);
    let rz = {
        let x = um.transpose().apply(pd);
        let y = u_var.transpose().apply(psi);
        [psi_dot_z[0] - x[0] - y[0], psi_dot_z[1] - x[1] - y[1]]
    };
    let rzb = {
        let x = vm.transpose().apply(pd);
        let y = v_var.transpose().apply(psi);
        [psi_dot_zbar[0] - x[0] - y[0], psi_dot_zbar[1] - x[1] - y[1]]
    };
    rz.iter().chain(&rzb).map(|v| v.norm()).fold(0.0, f64::max)
}

/// Stencil residuals of the variation on the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearizedResidual {
    /// Linearised system, relative to `max |ξ|·max |ψ|`.
    pub system: f64,
    /// Stencil `∂u̇`, `∂̄u̇` against the closed forms, relative to `max |ξ|`.
    pub u_dot: f64,
}

pub fn linearized_residual(
    variation: &PsiVariation,
    products: &EigenProducts,
    psi: &BAFunction,
    sol: &SinhGordonSolution,
) -> Result<LinearizedResidual> {
    let g = sol.grid();
    if products.grid() != g || psi.grid() != g || variation.psi_dot1.grid != g {
        return Err(SpectralError::GridMismatch);
    }
    let (lambda, a) = (variation.lambda, variation.anchor);
    let (d1z, d2z) = (variation.psi_dot1.dz()?, variation.psi_dot2.dz()?);
    let (d1b, d2b) = (variation.psi_dot1.dzbar()?, variation.psi_dot2.dzbar()?);
    let udot = products.omega();
    let (udz, udb) = (udot.dz()?, udot.dzbar()?);
    let xi_size = [&products.xi11, &products.xi12, &products.xi21, &products.xi22]
        .iter()
        .map(|f| f.max_abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let psi_size = psi.psi1.max_abs().max(psi.psi2.max_abs()).max(1e-300);
    let worst = (0..g.len())
        .into_par_iter()
        .map(|k| {
            let xi = products_at(products, k);
            let u = (sol.u.values[k], sol.u_z.values[k], sol.u_zbar.values[k]);
            let sys = linearized_defect_point(
                lambda,
                a,
                u,
                xi,
                [psi.psi1.values[k], psi.psi2.values[k]],
                [d1z.values[k], d2z.values[k]],
                [d1b.values[k], d2b.values[k]],
            );
            let (_, dz, dzb) = u_dot_point(a, u.0, xi);
            let ud = (udz.values[k] - dz).norm().max((udb.values[k] - dzb).norm());
            (sys, ud)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0.max(y.0), x.1.max(y.1)));
    Ok(LinearizedResidual { system: worst.0 / (xi_size * psi_size), u_dot: worst.1 / xi_size })
}

/// Finite-difference oracle for `ψ̇`: the transposed system is re-integrated
/// with `u + t·u̇` (and the closed-form `∂u̇`, `∂̄u̇`) from `ψ(z₀) + t·ψ̇(z₀)`,
/// and `(ψ_t − ψ)/t − ψ̇` is measured relative to `max |ψ̇|`. Both runs sample
/// the fields by grid interpolation.
pub fn psi_variation_fd(
    sol: &SinhGordonSolution,
    products: &EigenProducts,
    psi: &BAFunction,
    ts: &[f64],
    frame: FrameOptions,
) -> Result<Vec<(f64, f64)>> {
    let (lambda, a) = (psi.lambda, products.lambda);
    check_anchor(lambda, a)?;
    let g = sol.grid();
    if products.grid() != g || psi.grid() != g {
        return Err(SpectralError::GridMismatch);
    }
    let base = SinhGordonSolution { orbit: None, ..sol.clone() };
    let seed = [psi.psi1.values[0], psi.psi2.values[0]];
    let fund0 = solve_fundamental(&base, lambda, frame)?;
    let psi0: Vec<[Complex64; 2]> = fund0.values.values.iter().map(|m| m.apply(seed)).collect();
    let dots: Vec<[Complex64; 2]> =
        (0..g.len()).map(|k| psi_dot_point(lambda, a, products_at(products, k), psi0[k])).collect();
    let dot_size = dots.iter().map(|v| v[0].norm().max(v[1].norm())).fold(0.0, f64::max).max(1e-300);
    let pert: Vec<(Complex64, Complex64, Complex64)> =
        (0..g.len()).map(|k| u_dot_point(a, sol.u.values[k], products_at(products, k))).collect();
    let mut out = Vec::with_capacity(ts.len());
    for &t in ts {
        let shifted = |f: &ScalarField, pick: fn(&(Complex64, Complex64, Complex64)) -> Complex64| {
            ScalarField::new(g, f.values.iter().zip(&pert).map(|(v, p)| v + pick(p) * t).collect())
                .with_periodic(f.periodic)
        };
        let moved = SinhGordonSolution {
            u: shifted(&base.u, |p| p.0),
            u_z: shifted(&base.u_z, |p| p.1),
            u_zbar: shifted(&base.u_zbar, |p| p.2),
            residual_max: 0.0,
            orbit: None,
        };
        let fund = solve_fundamental(&moved, lambda, frame)?;
        let start = [seed[0] + dots[0][0] * t, seed[1] + dots[0][1] * t];
        let err = fund
            .values
            .values
            .iter()
            .zip(&psi0)
            .zip(&dots)
            .map(|((m, p0), d)| {
                let v = m.apply(start);
                ((v[0] - p0[0]) / t - d[0]).norm().max(((v[1] - p0[1]) / t - d[1]).norm())
            })
            .fold(0.0, f64::max);
        out.push((t, err / dot_size));
    }
    Ok(out)
}

/// Displacements at or below this are round-off; see [`motion_order`].
pub const MOTION_FLOOR: f64 = 1e-12;

/// Observed order of `y(t)`: the log-log slope over the points above
/// [`MOTION_FLOOR`], or infinity when fewer than two are (no measurable motion).
pub fn motion_order(points: &[(f64, f64)]) -> f64 {
    let above: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.1 > MOTION_FLOOR).collect();
    if above.len() < 2 {
        f64::INFINITY
    } else {
        loglog_slope(&above)
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.max(1e-300).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

// ---------------------------------------------------------------------------
// Deformation generators
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorKind {
    Isospectral,
    NonIsospectral,
}

#[derive(Clone, Debug)]
pub struct DeformationGenerator {
    pub kind: GeneratorKind,
    pub anchor: Complex64,
    /// `Q` at each node of the Killing field.
    pub q: Vec<Mat2>,
    /// `ξ̇` at each node, exponents `−1…g`.
    pub xi_dot: Vec<LoopMatrix>,
    /// Largest remainder of the division by `λ − a` (removable singularity).
    pub removable_defect: f64,
    /// Largest `|det Q|/|Q|²`.
    pub rank_defect: f64,
    pub trace_max: f64,
    /// Non-isospectral kind: the factor `c` with `[K(a), ξ(a)] = c·ξ(a)` at `z₀`
    /// and the largest relative deviation from proportionality.
    pub proportionality: Option<(Complex64, f64)>,
}

/// `K(λ) = diag(λ, a)Q + Q diag(a, λ)` as a loop with exponents 0 and 1.
fn deformation_loop(a: Complex64, q: Mat2) -> LoopMatrix {
    let k0 = (e22() * q + q * e11()) * a;
    let k1 = e11() * q + q * e22();
    LoopMatrix::new(0, vec![k0, k1])
}

fn check_branch_point(pkf: &PolynomialKillingField, a: Complex64) -> Result<()> {
    let scale = pkf.xi0.max_abs().max(1.0);
    let det = pkf.xi0.eval(a)?.det().norm();
    if det > BRANCH_TOL * scale * scale {
        return Err(SpectralError::NotBranchPoint { at: a, det });
    }
    Ok(())
}

fn finish_generator(
    kind: GeneratorKind,
    a: Complex64,
    q: Vec<Mat2>,
    numerators: Vec<LoopMatrix>,
    proportionality: Option<(Complex64, f64)>,
) -> DeformationGenerator {
    let mut removable = 0.0f64;
    let mut trace_max = 0.0f64;
    let mut xi_dot = Vec::with_capacity(numerators.len());
    for n in &numerators {
        let (quot, rem) = n.div_linear(a);
        let size = n.max_abs().max(1e-300);
        removable = removable.max(rem.max_abs() / size);
        trace_max = trace_max.max(quot.coeffs.iter().map(|m| m.trace().norm()).fold(0.0, f64::max));
        xi_dot.push(quot);
    }
    let rank_defect = q.iter().map(|m| m.det().norm() / m.norm().powi(2).max(1e-300)).fold(0.0, f64::max);
    DeformationGenerator {
        kind,
        anchor: a,
        q,
        xi_dot,
        removable_defect: removable,
        rank_defect,
        trace_max,
        proportionality,
    }
}

/// `ξ̇ = (λ − a)⁻¹[diag(λ, a)Q + Q diag(a, λ), ξ]` with `Q = ψφᵗ` at the branch
/// point `a`. There `ξ(a)` is nilpotent and `ψ`, `φ` span its kernel and
/// cokernel, so `Q(z)` is `ξ(z)(a)` up to a constant; it is scaled to
/// `|Q(z₀)| = 1`.
pub fn isospectral_generator(pkf: &PolynomialKillingField, a: Complex64) -> Result<DeformationGenerator> {
    check_branch_point(pkf, a)?;
    let norm0 = pkf.xi0.eval(a)?.norm().max(1e-300);
    let q: Vec<Mat2> =
        pkf.values.iter().map(|v| v.eval(a).map(|m| m * (1.0 / norm0))).collect::<std::result::Result<_, _>>()?;
    let numerators: Vec<LoopMatrix> =
        pkf.values.par_iter().zip(&q).map(|(xi, q)| deformation_loop(a, *q).commutator(xi)).collect();
    Ok(finish_generator(GeneratorKind::Isospectral, a, q, numerators, None))
}

/// Which polynomial form of the eigenvectors is used; each form vanishes where
/// one off-diagonal entry of `ξ(a)` does, so the larger one at the anchor is kept.
#[derive(Clone, Copy, Debug)]
struct SheetForms {
    /// `ψ = (ξ₁₂, ν − ξ₁₁)` if true, else `(ν + ξ₁₁, ξ₂₁)`; `ξψ = νψ`.
    psi_upper: bool,
    /// `φ = (ξ₂₁, −ν − ξ₁₁)` if true, else `(ξ₁₁ − ν, ξ₁₂)`; `φᵗξ = −νφᵗ`.
    phi_lower: bool,
}

impl SheetForms {
    fn choose(x: Mat2) -> Self {
        let n = |p: Complex64, q: Complex64| p.norm_sqr() + q.norm_sqr();
        Self { psi_upper: n(x.b, x.a) >= n(x.a, x.c), phi_lower: n(x.c, x.a) >= n(x.a, x.b) }
    }

    /// `ψ·σ*φᵗ` on the sheet with eigenvalue `ν`.
    fn product(&self, x: Mat2, nu: Complex64) -> Mat2 {
        let psi = if self.psi_upper { [x.b, nu - x.a] } else { [nu + x.a, x.c] };
        let phi = if self.phi_lower { [x.c, -nu - x.a] } else { [x.a - nu, x.b] };
        Mat2::outer(psi, phi)
    }
}

/// `d/dy(ψ·σ*φᵗ)` at `y = 0`, `λ − a = y²`, by central differences at `±δ`
/// and `±2δ` combined by one Richardson step.
fn sheet_derivative(
    xi: &LoopMatrix,
    a: Complex64,
    forms: SheetForms,
    nu_ref: Option<Complex64>,
) -> Result<(Mat2, Complex64)> {
    let central = |d: f64, reference: Option<Complex64>| -> Result<(Mat2, Complex64)> {
        let x = xi.eval(a + d * d)?;
        let mut nu = (-x.det()).sqrt();
        if let Some(r) = reference {
            if (nu + r).norm() < (nu - r).norm() {
                nu = -nu;
            }
        }
        Ok(((forms.product(x, nu) - forms.product(x, -nu)) * (0.5 / d), nu))
    };
    let (q1, nu) = central(CURVE_DELTA, nu_ref)?;
    let (q2, _) = central(2.0 * CURVE_DELTA, Some(nu * 2.0))?;
    Ok(((q1 * 4.0 - q2) * (1.0 / 3.0), nu))
}

/// `ξ̇ = (λ − a)⁻¹([K(λ), ξ] − cξ)` with `K` built from
/// `Q = d/dy(ψ·σ*φᵗ)` in the local parameter `λ − a = y²` (the same `λ` on
/// opposite sheets for `±y`). Since `det ξ·ξ⁻¹ = −ξ`, the eigenvalue variation
/// contributes a multiple of `ξ`; `c` is fixed by `[K(a), ξ(a)] = cξ(a)`, which
/// makes the singularity removable. The anchor then moves to `a + 2ct` to first order.
pub fn nonisospectral_generator(
    pkf: &PolynomialKillingField,
    curve: &SpectralCurve,
    a: Complex64,
) -> Result<DeformationGenerator> {
    check_branch_point(pkf, a)?;
    let nearest = curve
        .all_branch_points()
        .iter()
        .map(|b| (b - a).norm())
        .filter(|d| *d > DISTINCT_TOL)
        .fold(f64::INFINITY, f64::min);
    if nearest < ANCHOR_SEPARATION {
        return Err(SpectralError::CurveTooDegenerate { distance: nearest });
    }
    let forms = SheetForms::choose(pkf.xi0.eval(a)?);
    let (_, nu_ref) = sheet_derivative(&pkf.xi0, a, forms, None)?;
    let q: Vec<Mat2> =
        pkf.values.iter().map(|v| sheet_derivative(v, a, forms, Some(nu_ref)).map(|r| r.0)).collect::<Result<_>>()?;
    let mut c0 = None;
    let mut worst = 0.0f64;
    let mut numerators = Vec::with_capacity(q.len());
    for (xi, qk) in pkf.values.iter().zip(&q) {
        let comm = deformation_loop(a, *qk).commutator(xi);
        let na = comm.eval(a)?;
        let xa = xi.eval(a)?;
        let ck = frobenius(&xa, &na) / frobenius(&xa, &xa);
        worst = worst.max((na - xa * ck).norm() / na.norm().max(1e-300));
        c0.get_or_insert(ck);
        numerators.push(comm.add(&xi.scale(-ck)));
    }
    let prop = c0.map(|c| (c, worst));
    Ok(finish_generator(GeneratorKind::NonIsospectral, a, q, numerators, prop))
}

/// `|det(ξ₀ + tξ̇₀)(p) − det ξ₀(p)|` at each point for each `t`.
pub fn det_sweep(
    xi0: &LoopMatrix,
    xi_dot0: &LoopMatrix,
    points: &[Complex64],
    ts: &[f64],
) -> Result<Vec<Vec<(f64, f64)>>> {
    points
        .iter()
        .map(|&p| {
            let d0 = xi0.eval(p)?.det();
            ts.iter()
                .map(|&t| {
                    let m = xi0.add(&xi_dot0.scale(c(t, 0.0))).eval(p)?;
                    Ok((t, (m.det() - d0).norm()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Laurent coefficients of `det` of a loop as an ordinary polynomial in `λ`
/// after clearing the pole.
fn det_polynomial(x: &LoopMatrix) -> Vec<Complex64> {
    x.det_coeffs().1
}

/// Roots of `det(ξ₀ + tξ̇₀)` followed by Newton's method from each root of
/// `det ξ₀`; a root that lands nearer another start than its own is a collision.
pub fn track_roots(xi0: &LoopMatrix, xi_dot0: &LoopMatrix, roots: &[Complex64], t: f64) -> Result<Vec<Complex64>> {
    let moved = xi0.add(&xi_dot0.scale(c(t, 0.0)));
    let p = det_polynomial(&moved);
    let mut out = Vec::with_capacity(roots.len());
    for (idx, &r0) in roots.iter().enumerate() {
        let mut r = r0;
        for _ in 0..60 {
            let d = horner_deriv(&p, r);
            if d.norm() == 0.0 {
                break;
            }
            let step = horner(&p, r) / d;
            r -= step;
            if step.norm() <= 1e-16 * r.norm().max(1.0) {
                break;
            }
        }
        let own = (r - r0).norm();
        if !r.is_finite() || roots.iter().enumerate().any(|(j, q)| j != idx && (r - q).norm() < own) {
            return Err(SpectralError::RootCollision { index: idx });
        }
        out.push(r);
    }
    Ok(out)
}

/// Displacement of every root of `det ξ₀` under `ξ₀ + tξ̇₀`, per `t`.
pub fn root_motion(
    xi0: &LoopMatrix,
    xi_dot0: &LoopMatrix,
    roots: &[Complex64],
    ts: &[f64],
) -> Result<Vec<Vec<(f64, f64)>>> {
    let tracked: Vec<Vec<Complex64>> =
        ts.iter().map(|&t| track_roots(xi0, xi_dot0, roots, t)).collect::<Result<_>>()?;
    Ok((0..roots.len())
        .map(|i| ts.iter().zip(&tracked).map(|(&t, r)| (t, (r[i] - roots[i]).norm())).collect())
        .collect())
}

/// `½(ξ̇ + ρ(ξ̇))`, the part of a deformation that preserves the reality condition.
pub fn real_part(xi_dot: &LoopMatrix, genus: u32) -> LoopMatrix {
    xi_dot.add(&xi_dot.reality_image(genus)).scale(c(0.5, 0.0))
}

/// Smallest singular value of the stacked, normalised `ξ̇(z₀)` coefficient vectors.
pub fn generator_rank(generators: &[DeformationGenerator]) -> f64 {
    if generators.is_empty() {
        return 0.0;
    }
    let lo = generators.iter().map(|g| g.xi_dot[0].j_min).min().unwrap_or(0);
    let hi = generators.iter().map(|g| g.xi_dot[0].j_max()).max().unwrap_or(0);
    let width = 4 * (hi - lo + 1) as usize;
    let columns: Vec<Vec<Complex64>> = generators
        .iter()
        .map(|g| {
            let x = &g.xi_dot[0];
            let v: Vec<Complex64> = (lo..=hi).flat_map(|j| x.coeff(j).entries()).collect();
            let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
            v.into_iter().map(|z| z / n).collect()
        })
        .collect();
    let m = DMatrix::from_fn(width, generators.len(), |r, col| columns[col][r]);
    m.singular_values().min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baker_akhiezer::{dual_from_sigma_star, eigen_products, solve_pair, solve_psi, PsiOptions};
    use crate::frames::build_alpha;
    use crate::sinh_gordon::{one_dimensional, period_of, vacuum};
    use proptest::prelude::*;

    fn vacuum_torus(n: usize) -> SinhGordonSolution {
        vacuum(Grid::periodic(n, n, 2.0 * PI, 2.0 * PI).unwrap())
    }

    fn one_d_torus(n: usize, u0: f64) -> SinhGordonSolution {
        let t = period_of(u0, 0.0).unwrap();
        one_dimensional(Grid::periodic(n, n, t, 2.0).unwrap(), u0, 0.0).unwrap()
    }

    fn quiet() -> (Complex64, Complex64) {
        (ONE, -ONE)
    }

    /// `c₋₁ = υ`, `c₀`, `c₁ = −c₀†`, `c₂ = −E₂₁`.
    fn genus_two(c0: Mat2) -> LoopMatrix {
        LoopMatrix::new(-1, vec![Mat2::upsilon(), c0, -c0.adjoint(), -e21()])
    }

    fn traceless(a: Complex64, b: Complex64, cc: Complex64) -> Mat2 {
        Mat2::new(a, b, cc, -a)
    }

    #[test]
    fn potentials_are_checked() {
        let p = one_dimensional_potential(0.5, 0.3);
        assert_eq!(potential_genus(&p).unwrap(), 1);
        assert!(matches!(potential_genus(&p.scale(c(2.0, 0.0))), Err(SpectralError::BadPotential { .. })));
        let mut broken = p.clone();
        broken.coeffs[1].b += c(1e-3, 0.0);
        assert!(matches!(potential_genus(&broken), Err(SpectralError::BadPotential { .. })));
        assert!(vacuum_potential(&[ONE, -ONE]).is_ok());
        assert!(matches!(vacuum_potential(&[ONE, ONE]), Err(SpectralError::BadPotential { .. })));
        assert_eq!(potential_genus(&genus_two(traceless(c(0.3, 0.1), c(0.2, -0.4), c(-0.5, 0.7)))).unwrap(), 2);
    }

    #[test]
    fn vacuum_killing_field_is_isospectral_and_degenerate() {
        let sol = vacuum_torus(64);
        let alpha = build_alpha(&sol);
        let xi0 = vacuum_potential(&[ONE, -ONE]).unwrap();
        let pkf = integrate_killing(&xi0, &alpha).unwrap();
        let r = pkf.report;
        assert!(r.det_spread <= 1e-9, "{r:?}");
        assert!(r.route_defect.unwrap() <= 1e-6, "{r:?}");
        assert!(r.reality_drift <= 1e-9, "{r:?}");
        assert!(r.trace_max <= 1e-12, "{r:?}");
        assert!(r.periodicity_defect.unwrap() <= 1e-6, "{r:?}");
        // (1 − λ)(λ⁻¹υ + E₂₁) has det = −(1 − λ)²λ⁻¹: a double root at 1.
        assert!(matches!(curve_from_killing(&pkf, quiet()), Err(SpectralError::DegenerateCurve { .. })));
    }

    #[test]
    fn generic_loop_leaks_on_the_vacuum() {
        let sol = vacuum_torus(32);
        let xi0 = genus_two(traceless(c(0.3, 0.1), c(0.2, -0.4), c(-0.5, 0.7)));
        assert!(matches!(integrate_killing(&xi0, &build_alpha(&sol)), Err(SpectralError::NotPolynomial { .. })));
    }

    #[test]
    fn lax_flow_is_linear() {
        let sol = one_d_torus(32, 0.5);
        let alpha = build_alpha(&sol);
        let xi0 = one_dimensional_potential(0.5, 0.0);
        let k = c(1.7, -0.6);
        let (base, _) = integrate_lax(&xi0, &alpha, FrameOptions::default());
        let (scaled, _) = integrate_lax(&xi0.scale(k), &alpha, FrameOptions::default());
        let worst = base.iter().zip(&scaled).map(|(a, b)| a.scale(k).add(&b.scale(-ONE)).max_abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{worst}");
    }

    #[test]
    fn one_dimensional_killing_field_matches_closed_form() {
        let sol = one_d_torus(64, 0.5);
        let alpha = build_alpha(&sol);
        let pkf = integrate_killing(&one_dimensional_potential(0.5, 0.0), &alpha).unwrap();
        let r = pkf.report;
        assert!(r.det_spread <= 1e-8, "{r:?}");
        assert!(r.route_defect.unwrap() <= 1e-6, "{r:?}");
        assert!(r.reality_drift <= 1e-9, "{r:?}");
        // ξ(x) = −e^{−u₀}·[[iu′, e^{−u} − λ⁻¹e^u], [λe^u − e^{−u}, −iu′]].
        let s = -(-0.5f64).exp();
        let mut worst = 0.0f64;
        for (k, v) in pkf.values.iter().enumerate() {
            let u = sol.u.values[k].re;
            let du = 2.0 * sol.u_z.values[k].re;
            let (ep, em) = (u.exp(), (-u).exp());
            let expect = [
                Mat2::new(ZERO, c(-s * ep, 0.0), ZERO, ZERO),
                Mat2::new(c(0.0, s * du), c(s * em, 0.0), c(-s * em, 0.0), c(0.0, -s * du)),
                Mat2::new(ZERO, ZERO, c(s * ep, 0.0), ZERO),
            ];
            for (j, e) in expect.iter().enumerate() {
                worst = worst.max((v.coeffs[j] - *e).max_abs());
            }
        }
        assert!(worst <= 1e-8, "{worst}");
    }

    #[test]
    fn genus_one_round_trip_recovers_branch_points() {
        // E = cosh(ln 2) = 5/4, so the roots of 2E − λ − λ⁻¹ are 1/2 and 2.
        let pkf = PolynomialKillingField::from_potential(one_dimensional_potential(0.5 * 2f64.ln(), 0.0)).unwrap();
        let curve = curve_from_killing(&pkf, quiet()).unwrap();
        assert_eq!(curve.genus, 1);
        assert!((curve.branch_points[0] - c(0.5, 0.0)).norm() <= 1e-8, "{:?}", curve.branch_points);
        assert!((curve.mirrors[0] - c(2.0, 0.0)).norm() <= 1e-8, "{:?}", curve.mirrors);
        assert!((curve.scale - ONE).norm() <= 1e-10, "{}", curve.scale);
        assert!(curve.top_coefficient <= 1e-12);
        assert!(curve.positivity_min > 0.0 && curve.positivity_imag <= 1e-12);
        assert!(curve.a_consistency <= 1e-10);
        // a(λ) = (λ − ½)(λ⁻¹ − ½) = 5/4 − ½(λ + λ⁻¹).
        assert!((curve.a(c(-1.0, 0.0)) - c(2.25, 0.0)).norm() <= 1e-12);
        let prev = curve.sheets.windows(2).map(|w| (w[1].nu - w[0].nu).norm()).fold(0.0, f64::max);
        assert!(prev < 0.5, "sheet jump {prev}");
    }

    #[test]
    fn polynomial_roots_of_known_factors() {
        let roots = [c(0.5, 0.2), c(-1.0, 0.0), c(3.0, -1.0)];
        // (x − r₀)(x − r₁)(x − r₂), expanded by hand.
        let e1: Complex64 = roots.iter().sum();
        let e2 = roots[0] * roots[1] + roots[0] * roots[2] + roots[1] * roots[2];
        let e3 = roots[0] * roots[1] * roots[2];
        let found = polynomial_roots(&[-e3, e2, -e1, ONE]);
        for r in roots {
            assert!(found.iter().any(|f| (f - r).norm() < 1e-12), "{found:?}");
        }
    }

    #[test]
    fn clifford_torus_satisfies_curve_conditions() {
        let sol = vacuum_torus(64);
        let alpha = build_alpha(&sol);
        let opts = MonodromyOptions::default();
        let rep = verify_curve_conditions(quiet(), &alpha, &default_condition_samples(), &opts).unwrap();
        assert!(rep.sym_point_defect <= 1e-6, "{rep:?}");
        assert!(rep.sigma_defect <= 1e-8, "{rep:?}");
        assert!(rep.involution_defect <= 1e-6, "{rep:?}");
        assert!(rep.singular_det.norm() > 1e-6, "{rep:?}");
        // (i/2)²·(γ₁γ̄₂ − γ̄₁γ₂) with γ₁ = 2π, γ₂ = 2πi.
        assert!((rep.singular_det - c(0.0, 2.0 * PI * PI)).norm() <= 1e-6, "{rep:?}");
        assert!(rep.singular_plane_wave_defect <= 1e-6, "{rep:?}");
        assert!(matches!(
            verify_curve_conditions(quiet(), &alpha, &[ONE], &opts),
            Err(SpectralError::InsufficientSamples { .. })
        ));
        let open = vacuum(Grid::new(16, 16, 0.1, 0.1, ZERO, [true, false]).unwrap());
        assert!(matches!(
            verify_curve_conditions(quiet(), &build_alpha(&open), &default_condition_samples(), &opts),
            Err(SpectralError::NotDoublyPeriodic)
        ));
    }

    #[test]
    fn dp_expansion_on_the_vacuum() {
        let dp = dp_expansion(&vacuum_torus(64), &MonodromyOptions::default()).unwrap();
        assert!((dp.p_minus_1 - c(0.0, 0.5)).norm() <= 1e-3, "{dp:?}");
        assert!(dp.p_plus_1.norm() <= 1e-3, "{dp:?}");
        assert!(dp.error_leading() <= 1e-3, "{dp:?}");
    }

    #[test]
    fn dp_expansion_on_one_dimensional_solution() {
        let dp = dp_expansion(&one_d_torus(64, 0.5), &MonodromyOptions::default()).unwrap();
        assert!(dp.error_plus_1() <= 1e-2, "{dp:?}");
        assert!(dp.error_minus_1() <= 1e-2, "{dp:?}");
        assert!(dp.error_leading() <= 1e-2, "{dp:?}");
        // For u = u(x): p⁺₁ − p⁻₁ = −(i/2)E with E = ½u′² + cosh 2u.
        let e = (2.0f64 * 0.5).cosh();
        assert!((dp.p_plus_1 - dp.p_minus_1 + c(0.0, 0.5 * e)).norm() <= 1e-2 * e, "{dp:?}");
    }

    #[test]
    fn dp_expansion_rejects_degenerate_periods() {
        let sol = vacuum(Grid::new(16, 16, 0.1, 0.1, ZERO, [true, false]).unwrap());
        assert!(matches!(dp_expansion(&sol, &MonodromyOptions::default()), Err(SpectralError::NotDoublyPeriodic)));
    }

    fn vacuum_products(sol: &SinhGordonSolution, a: Complex64) -> EigenProducts {
        let (psi, partner) = solve_pair(sol, a, PsiOptions::default()).unwrap();
        eigen_products(&psi, &dual_from_sigma_star(&partner)).unwrap()
    }

    #[test]
    fn psi_variation_on_the_vacuum() {
        let sol = vacuum_torus(64);
        let a = c(4.0, 0.0);
        let prods = vacuum_products(&sol, a);
        let lam = c(2.0, 0.5);
        let psi = solve_psi(&sol, lam, [ONE, ZERO]).unwrap();
        assert!(rank_one_defect(&prods, &psi).unwrap() <= 1e-12);
        // On the vacuum the products are constant and ψ = E(z)·(1, s⁻¹) with
        // E = exp((i/2)(s⁻¹z + s z̄)), ∂E = (i/2)s⁻¹E, ∂̄E = (i/2)sE.
        let xi = products_at(&prods, 0);
        let s = lam.sqrt();
        let g = sol.grid();
        let mut worst = 0.0f64;
        for k in [0, 17, 1000, 4095] {
            let z = g.z(k % g.nx, k / g.nx);
            let e = (I * 0.5 * (z / s + s * z.conj())).exp();
            let psi_k = [e * psi.psi1.values[0], e * psi.psi2.values[0]];
            let dz = psi_dot_point(lam, a, xi, psi_k).map(|v| v * (I * 0.5 / s));
            let dzb = psi_dot_point(lam, a, xi, psi_k).map(|v| v * (I * 0.5 * s));
            let r = linearized_defect_point(lam, a, (ZERO, ZERO, ZERO), xi, psi_k, dz, dzb);
            worst = worst.max(r / (xi.max_abs() * e.norm()));
        }
        assert!(worst <= 1e-8, "{worst}");
        let same = solve_psi(&sol, a, [ONE, ZERO]).unwrap();
        assert!(matches!(vary_psi(&prods, &same), Err(SpectralError::LambdaEqualsAnchor(_))));
    }

    #[test]
    fn stencil_linearized_residual_converges() {
        let (a, lam) = (c(4.0, 0.0), c(2.0, 0.5));
        let res: Vec<LinearizedResidual> = [32, 64]
            .iter()
            .map(|&n| {
                let sol = vacuum_torus(n);
                let prods = vacuum_products(&sol, a);
                let psi = solve_psi(&sol, lam, [ONE, ZERO]).unwrap();
                let var = vary_psi(&prods, &psi).unwrap();
                linearized_residual(&var, &prods, &psi, &sol).unwrap()
            })
            .collect();
        let order = crate::observed_order(res[0].system, res[1].system);
        assert!(order >= 3.0, "{res:?}");
        assert!(res[1].u_dot <= 1e-9, "{res:?}");
    }

    #[test]
    fn psi_variation_converges_to_the_finite_difference() {
        let sol = one_d_torus(64, 0.5);
        let a = c(0.3, 0.1);
        let (pa, partner) = solve_pair(&sol, a, PsiOptions::default()).unwrap();
        let prods = eigen_products(&pa, &dual_from_sigma_star(&partner)).unwrap();
        let psi = solve_psi(&sol, c(1.5, 0.4), [ONE, ZERO]).unwrap();
        let ts = [0.08, 0.04, 0.02, 0.01];
        let errs = psi_variation_fd(&sol, &prods, &psi, &ts, FrameOptions::default()).unwrap();
        let slope = loglog_slope(&errs);
        assert!((slope - 1.0).abs() <= 0.1, "{errs:?} slope {slope}");
    }

    fn genus_one_field() -> PolynomialKillingField {
        PolynomialKillingField::from_potential(one_dimensional_potential(0.5 * 2f64.ln(), 0.0)).unwrap()
    }

    const SWEEP: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

    #[test]
    fn isospectral_generator_preserves_det_to_first_order() {
        let pkf = genus_one_field();
        let curve = curve_from_killing(&pkf, quiet()).unwrap();
        for a in curve.all_branch_points() {
            let gen = isospectral_generator(&pkf, a).unwrap();
            assert!(gen.rank_defect <= 1e-10, "{}", gen.rank_defect);
            assert!(gen.removable_defect <= 1e-8, "{}", gen.removable_defect);
            assert_eq!(gen.trace_max, 0.0);
            let sweep = det_sweep(&pkf.xi0, &gen.xi_dot[0], &curve.all_branch_points(), &SWEEP).unwrap();
            for line in sweep {
                let slope = motion_order(&line);
                assert!(slope >= 1.9, "{line:?}");
            }
        }
        assert!(matches!(isospectral_generator(&pkf, c(0.7, 0.0)), Err(SpectralError::NotBranchPoint { .. })));
    }

    #[test]
    fn nonisospectral_generator_moves_only_its_branch_point() {
        let pkf = genus_one_field();
        let curve = curve_from_killing(&pkf, quiet()).unwrap();
        let roots = curve.all_branch_points();
        for (idx, &a) in roots.iter().enumerate() {
            let gen = nonisospectral_generator(&pkf, &curve, a).unwrap();
            assert!(gen.removable_defect <= 1e-8, "{}", gen.removable_defect);
            let (_, prop) = gen.proportionality.unwrap();
            assert!(prop <= 1e-8, "{prop}");
            let motion = root_motion(&pkf.xi0, &gen.xi_dot[0], &roots, &SWEEP).unwrap();
            for (k, line) in motion.iter().enumerate() {
                let slope = motion_order(line);
                if k == idx {
                    assert!((slope - 1.0).abs() <= 0.1, "anchor {line:?}");
                } else {
                    assert!(slope >= 1.9, "root {k}: {line:?}");
                }
            }
        }
    }

    #[test]
    fn real_deformation_keeps_mirror_pairs() {
        let pkf = genus_one_field();
        let curve = curve_from_killing(&pkf, quiet()).unwrap();
        let a = curve.branch_points[0];
        let gen = nonisospectral_generator(&pkf, &curve, a).unwrap();
        let real = real_part(&gen.xi_dot[0], pkf.genus);
        assert!(real.reality_defect(pkf.genus) <= 1e-12);
        let roots = curve.all_branch_points();
        let mut defects = Vec::new();
        for t in SWEEP {
            let moved = track_roots(&pkf.xi0, &real, &roots, t).unwrap();
            assert!((moved[0] - roots[0]).norm() > 0.1 * t);
            defects.push((t, (moved[1] - moved[0].conj().inv()).norm()));
        }
        assert!(defects.iter().all(|d| d.1 <= 1e-10), "{defects:?}");
    }

    #[test]
    fn nonisospectral_generator_refuses_close_roots() {
        // With u′ = 0 the branch points are e^{∓2u₀}, here 8.8e-5 apart.
        let pkf = PolynomialKillingField::from_potential(one_dimensional_potential(2.2e-5, 0.0)).unwrap();
        let curve = curve_from_killing(&pkf, quiet()).unwrap();
        let a = curve.branch_points[0];
        assert!(matches!(nonisospectral_generator(&pkf, &curve, a), Err(SpectralError::CurveTooDegenerate { .. })));
    }

    #[test]
    fn isospectral_generators_are_independent_in_genus_two() {
        let xi0 = genus_two(traceless(c(0.3, 0.1), c(0.2, -0.4), c(-0.5, 0.7)));
        let pkf = PolynomialKillingField::from_potential(xi0).unwrap();
        let curve = curve_from_killing(&pkf, quiet()).unwrap();
        assert_eq!(curve.branch_points.len(), 2);
        let gens: Vec<DeformationGenerator> =
            curve.branch_points.iter().map(|&a| isospectral_generator(&pkf, a).unwrap()).collect();
        let rank = generator_rank(&gens);
        assert!(rank > 1e-8, "{rank}");
        for gen in &gens {
            let sweep = det_sweep(&pkf.xi0, &gen.xi_dot[0], &curve.all_branch_points(), &SWEEP).unwrap();
            assert!(sweep.iter().all(|l| motion_order(l) >= 1.9));
        }
        for (idx, &a) in curve.all_branch_points().iter().enumerate() {
            let gen = nonisospectral_generator(&pkf, &curve, a).unwrap();
            let motion = root_motion(&pkf.xi0, &gen.xi_dot[0], &curve.all_branch_points(), &SWEEP).unwrap();
            for (k, line) in motion.iter().enumerate() {
                let slope = motion_order(line);
                assert!(if k == idx { (slope - 1.0).abs() <= 0.1 } else { slope >= 1.9 }, "{idx}/{k}: {line:?}");
            }
        }
    }

    #[test]
    fn eigenfunction_is_an_eigenvector_of_the_killing_field() {
        let sol = one_d_torus(64, 0.5);
        let alpha = build_alpha(&sol);
        let pkf = integrate_killing(&one_dimensional_potential(0.5, 0.0), &alpha).unwrap();
        let psi = solve_psi(&sol, c(0.3, 0.1), [ONE, ZERO]).unwrap();
        let check = eigenvector_residual(&pkf, &psi).unwrap();
        assert!(check.residual <= 1e-7, "{check:?}");
        assert!(check.nu_defect <= 1e-9, "{check:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn real_potentials_give_symmetric_positive_curves(
            a in (-1.0..1.0f64, -1.0..1.0f64),
            b in (-1.0..1.0f64, -1.0..1.0f64),
            d in (-1.0..1.0f64, -1.0..1.0f64),
        ) {
            let xi0 = genus_two(traceless(c(a.0, a.1), c(b.0, b.1), c(d.0, d.1)));
            let pkf = PolynomialKillingField::from_potential(xi0.clone()).unwrap();
            // Reality makes λ^{−l}ξ₀ skew-hermitian on the unit circle.
            for m in 0..8 {
                let lam = unit(0.3 + m as f64 * 0.7);
                let x = pkf.eval_shifted(0, lam).unwrap();
                prop_assert!((x + x.adjoint()).max_abs() <= 1e-12);
            }
            match curve_from_killing(&pkf, quiet()) {
                Ok(curve) => {
                    prop_assert!(curve.symmetry_defect <= 1e-8);
                    prop_assert!(curve.positivity_min > 0.0);
                    prop_assert!(curve.scale.re > 0.0 && curve.scale.im.abs() <= 1e-10 * curve.scale.re);
                }
                Err(SpectralError::DegenerateCurve { .. }) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn horner_matches_power_sum(re in proptest::collection::vec(-2.0..2.0f64, 1..7), x in (-1.5..1.5f64, -1.5..1.5f64)) {
            let p: Vec<Complex64> = re.iter().enumerate().map(|(k, v)| c(*v, 0.1 * k as f64)).collect();
            let z = c(x.0, x.1);
            let direct: Complex64 = p.iter().enumerate().map(|(k, v)| v * z.powi(k as i32)).sum();
            prop_assert!((horner(&p, z) - direct).norm() <= 1e-12 * (1.0 + direct.norm()) * 1e2);
        }
    }
}
