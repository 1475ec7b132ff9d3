//! Baker–Akhiezer eigenfunctions: solutions `ψ` of the transposed linear
//! system, their duals `φ`, the products `ξ_ij = ψ_i φ_j`, the rank-one
//! matrix `P = ψφᵗ/(ψᵗφ)` and its expansions at `λ = 0` and `λ = ∞`.

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::{fit_series_many, sqrt_lambda, AlgebraError, Field, Grid, Mat2, MatField, ScalarField};
use crate::frames::{
    build_alpha, integrate_system, Action, FrameError, FrameOptions, PointConnection, Renorm, SystemSpec,
};
use crate::sinh_gordon::SinhGordonSolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BakerAkhiezerError {
    #[error("the spectral parameter must be nonzero")]
    LambdaZero,
    #[error("the seed vector must be nonzero")]
    ZeroSeed,
    #[error("monodromy eigenvalue {mu} is within 1e-10 of ±1")]
    DegenerateMonodromy { mu: Complex64 },
    #[error("eigenfunctions belong to different spectral parameters ({left} and {right})")]
    InconsistentLambda { left: Complex64, right: Complex64 },
    #[error("eigenfunctions live on different grids")]
    GridMismatch,
    #[error("the grid has no periodic axis to select an eigen-branch")]
    NoPeriodicAxis,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

type Result<T> = std::result::Result<T, BakerAkhiezerError>;

const I: Complex64 = Complex64::new(0.0, 1.0);
const DEGENERATE_TOL: f64 = 1e-10;

/// Which eigenvector of the monodromy seeds the solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Multiplier with `|μ| ≥ 1` (argument in `[0, π)` on a tie).
    Outer,
    /// The reciprocal multiplier.
    Inner,
    /// Multiplier closest to the plane wave `exp((i/2)(λ^{-1/2}γ + λ^{1/2}γ̄))`,
    /// the branch on which the expansions at `λ = 0` and `λ = ∞` hold.
    PlaneWave,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiOptions {
    pub branch: Branch,
    /// Periodic axis whose monodromy selects the eigenvector; by default the
    /// one with the best separated multipliers.
    pub axis: Option<usize>,
    pub frame: FrameOptions,
}

impl Default for PsiOptions {
    fn default() -> Self {
        Self { branch: Branch::Outer, axis: None, frame: FrameOptions::default() }
    }
}

/// How the initial vector `ψ(z₀)` was fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// The caller's seed was used unchanged (no periodic axis).
    Seed,
    /// Monodromy eigenvector scaled to first component one.
    FirstComponent,
    /// Monodromy eigenvector scaled to second component one.
    SecondComponent,
}

/// Fundamental solution `Ψ` of `∂Ψ = UᵗΨ`, `∂̄Ψ = VᵗΨ`, `Ψ(z₀) = 1`; equal
/// to the transposed extended frame.
#[derive(Clone, Debug)]
pub struct Fundamental {
    pub lambda: Complex64,
    pub values: MatField,
    /// `C_i = Ψ(z₀ + γ_i)`; a solution `Ψv` has multiplier `μ` iff `C_i v = μv`.
    pub monodromy: [Option<Mat2>; 2],
}

/// A solution `ψ` of the transposed system at one spectral parameter.
#[derive(Clone, Debug)]
pub struct BAFunction {
    pub lambda: Complex64,
    pub psi1: ScalarField,
    pub psi2: ScalarField,
    /// Multiplier per periodic axis.
    pub multipliers: [Option<Complex64>; 2],
    pub seed: [Complex64; 2],
    pub normalization: Normalization,
    /// Axis whose monodromy fixed the seed.
    pub eigen_axis: Option<usize>,
    pub monodromy: [Option<Mat2>; 2],
}

impl BAFunction {
    pub fn grid(&self) -> Grid {
        self.psi1.grid
    }
}

/// A solution `φ` of `∂φ = −Uφ`, `∂̄φ = −Vφ`.
#[derive(Clone, Debug)]
pub struct DualBAFunction {
    pub lambda: Complex64,
    pub var1: ScalarField,
    pub var2: ScalarField,
    pub multipliers: [Option<Complex64>; 2],
}

/// Products `ξ_ij = ψ_i φ_j` and the constant pairing `y = ψᵗφ`.
#[derive(Clone, Debug)]
pub struct EigenProducts {
    pub lambda: Complex64,
    pub xi11: ScalarField,
    pub xi12: ScalarField,
    pub xi21: ScalarField,
    pub xi22: ScalarField,
    pub y: Complex64,
    /// Largest deviation of `ψ₁φ₁ + ψ₂φ₂` from its mean, relative to `|y|`.
    pub y_spread: f64,
    /// Largest `|μ_ψ μ_φ − 1|` over the periodic axes.
    pub multiplier_defect: f64,
}

impl EigenProducts {
    pub fn grid(&self) -> Grid {
        self.xi11.grid
    }

    /// `ω = ξ₁₁ − ξ₂₂`.
    pub fn omega(&self) -> ScalarField {
        self.xi11.zip(&self.xi22, |a, b| a - b)
    }

    /// The pointwise pairing `ψ₁φ₁ + ψ₂φ₂`.
    pub fn pairing(&self) -> ScalarField {
        self.xi11.zip(&self.xi22, |a, b| a + b)
    }
}

/// `P = ψφᵗ/(ψᵗφ)` on the grid.
#[derive(Clone, Debug)]
pub struct PMatrix {
    pub lambda: Complex64,
    pub p: MatField,
}

impl PMatrix {
    pub fn from_products(products: &EigenProducts) -> Self {
        let g = products.grid();
        let y = products.y;
        let p = Field::from_fn(g, |_, i, j| {
            let k = g.idx(i, j);
            Mat2::new(
                products.xi11.values[k],
                products.xi12.values[k],
                products.xi21.values[k],
                products.xi22.values[k],
            )
            .scale(y.inv())
        })
        .with_periodic(products.xi11.periodic);
        Self { lambda: products.lambda, p }
    }

    /// `max |P² − P|`.
    pub fn projector_defect(&self) -> f64 {
        self.p.values.iter().map(|m| (*m * *m - *m).max_abs()).fold(0.0, f64::max)
    }

    /// `max |tr P − 1|`.
    pub fn trace_defect(&self) -> f64 {
        self.p.values.iter().map(|m| (m.trace() - 1.0).norm()).fold(0.0, f64::max)
    }
}

/// Integrates the fundamental solution of the transposed system.
pub fn solve_fundamental(sol: &SinhGordonSolution, lambda: Complex64, opts: FrameOptions) -> Result<Fundamental> {
    if lambda.norm() == 0.0 {
        return Err(BakerAkhiezerError::LambdaZero);
    }
    let alpha = build_alpha(sol);
    let on_circle = (lambda.norm() - 1.0).abs() < 1e-12;
    let spec = SystemSpec {
        start: Mat2::identity(),
        action: Action::Left,
        transpose: true,
        renorm: if on_circle { Renorm::Unitary } else { Renorm::Det },
    };
    let out = integrate_system(&alpha, lambda, opts, spec)?;
    Ok(Fundamental { lambda, values: out.values, monodromy: out.monodromy })
}

/// Solves the transposed system from `seed`; on a grid with a periodic axis
/// the seed is replaced by the `|μ| ≥ 1` monodromy eigenvector.
pub fn solve_psi(sol: &SinhGordonSolution, lambda: Complex64, seed: [Complex64; 2]) -> Result<BAFunction> {
    solve_psi_with(sol, lambda, seed, PsiOptions::default())
}

pub fn solve_psi_with(
    sol: &SinhGordonSolution,
    lambda: Complex64,
    seed: [Complex64; 2],
    opts: PsiOptions,
) -> Result<BAFunction> {
    if seed[0].norm() == 0.0 && seed[1].norm() == 0.0 {
        return Err(BakerAkhiezerError::ZeroSeed);
    }
    let fundamental = solve_fundamental(sol, lambda, opts.frame)?;
    from_fundamental(&fundamental, seed, opts)
}

/// Both eigen-branches `(ψ, σ*ψ)` from a single integration.
pub fn solve_pair(sol: &SinhGordonSolution, lambda: Complex64, opts: PsiOptions) -> Result<(BAFunction, BAFunction)> {
    let fundamental = solve_fundamental(sol, lambda, opts.frame)?;
    let other = match opts.branch {
        Branch::Outer => Branch::Inner,
        Branch::Inner => Branch::Outer,
        Branch::PlaneWave => Branch::PlaneWave,
    };
    let psi = from_fundamental(&fundamental, [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], opts)?;
    let partner = if opts.branch == Branch::PlaneWave {
        let axis = psi.eigen_axis.ok_or(BakerAkhiezerError::NoPeriodicAxis)?;
        let c = fundamental.monodromy[axis].ok_or(BakerAkhiezerError::NoPeriodicAxis)?;
        let mu = psi.multipliers[axis].ok_or(BakerAkhiezerError::NoPeriodicAxis)?;
        let seed = normalise(c.eigenvector(c.det() / mu));
        build(&fundamental, seed.0, seed.1, Some(axis))
    } else {
        from_fundamental(&fundamental, psi.seed, PsiOptions { branch: other, axis: psi.eigen_axis, ..opts })?
    };
    Ok((psi, partner))
}

/// Selects the seed from the monodromy and samples `ψ = Ψ·seed`.
pub fn from_fundamental(fundamental: &Fundamental, seed: [Complex64; 2], opts: PsiOptions) -> Result<BAFunction> {
    if seed[0].norm() == 0.0 && seed[1].norm() == 0.0 {
        return Err(BakerAkhiezerError::ZeroSeed);
    }
    let candidates: Vec<usize> = match opts.axis {
        Some(a) => vec![a],
        None => (0..2).filter(|&a| fundamental.monodromy[a].is_some()).collect(),
    };
    if candidates.is_empty() {
        return Ok(build(fundamental, seed, Normalization::Seed, None));
    }
    let mut best: Option<(usize, f64)> = None;
    let mut degenerate = None;
    for &a in &candidates {
        let c = fundamental.monodromy[a].ok_or(BakerAkhiezerError::NoPeriodicAxis)?;
        let (mu, _) = c.eigenvalues();
        if (mu - 1.0).norm() < DEGENERATE_TOL || (mu + 1.0).norm() < DEGENERATE_TOL {
            degenerate = Some(mu);
            continue;
        }
        let separation = mu.norm().ln().abs();
        if best.is_none_or(|(_, s)| separation > s) {
            best = Some((a, separation));
        }
    }
    let Some((axis, _)) = best else {
        return Err(BakerAkhiezerError::DegenerateMonodromy { mu: degenerate.unwrap_or_default() });
    };
    let c = fundamental.monodromy[axis].expect("candidate axis is periodic");
    let (outer, inner) = c.eigenvalues();
    let mu = match opts.branch {
        Branch::Outer => outer,
        Branch::Inner => inner,
        Branch::PlaneWave => {
            let g = fundamental.values.grid;
            let gamma = g.periods()[axis].expect("candidate axis is periodic");
            let target = plane_wave_multiplier(fundamental.lambda, gamma)?;
            let d = |m: Complex64| (m / target).ln().norm();
            if d(outer) <= d(inner) {
                outer
            } else {
                inner
            }
        }
    };
    let (seed, norm) = normalise(c.eigenvector(mu));
    Ok(build(fundamental, seed, norm, Some(axis)))
}

/// `exp((i/2)(λ^{-1/2}γ + λ^{1/2}γ̄))`, the vacuum multiplier.
pub fn plane_wave_multiplier(lambda: Complex64, gamma: Complex64) -> Result<Complex64> {
    let s = sqrt_lambda(lambda)?;
    Ok((I * 0.5 * (gamma / s + s * gamma.conj())).exp())
}

fn normalise(v: [Complex64; 2]) -> ([Complex64; 2], Normalization) {
    let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    if v[0].norm() >= 1e-12 * n {
        ([Complex64::new(1.0, 0.0), v[1] / v[0]], Normalization::FirstComponent)
    } else {
        ([v[0] / v[1], Complex64::new(1.0, 0.0)], Normalization::SecondComponent)
    }
}

fn build(
    fundamental: &Fundamental,
    seed: [Complex64; 2],
    normalization: Normalization,
    eigen_axis: Option<usize>,
) -> BAFunction {
    let vals = &fundamental.values;
    let psi1 = vals.map(|m| m.apply(seed)[0]);
    let psi2 = vals.map(|m| m.apply(seed)[1]);
    let multipliers = fundamental.monodromy.map(|c| {
        c.map(|c| {
            // Rayleigh quotient; exact when the seed is an eigenvector.
            let w = c.apply(seed);
            let num = seed[0].conj() * w[0] + seed[1].conj() * w[1];
            num / (seed[0].norm_sqr() + seed[1].norm_sqr())
        })
    });
    BAFunction {
        lambda: fundamental.lambda,
        psi1,
        psi2,
        multipliers,
        seed,
        normalization,
        eigen_axis,
        monodromy: fundamental.monodromy,
    }
}

/// `φ = J·ψ_partner`, that is `(φ₁, φ₂) = (ψ₂, −ψ₁)` of the other branch.
pub fn dual_from_sigma_star(partner: &BAFunction) -> DualBAFunction {
    DualBAFunction {
        lambda: partner.lambda,
        var1: partner.psi2.clone(),
        var2: partner.psi1.map(|v| -v),
        multipliers: partner.multipliers,
    }
}

pub fn eigen_products(psi: &BAFunction, phi: &DualBAFunction) -> Result<EigenProducts> {
    if (psi.lambda - phi.lambda).norm() > 1e-14 * psi.lambda.norm() {
        return Err(BakerAkhiezerError::InconsistentLambda { left: psi.lambda, right: phi.lambda });
    }
    if psi.grid() != phi.var1.grid {
        return Err(BakerAkhiezerError::GridMismatch);
    }
    let mut periodic = [false; 2];
    let mut multiplier_defect = 0.0f64;
    for (flag, (mu, nu)) in periodic.iter_mut().zip(psi.multipliers.iter().zip(&phi.multipliers)) {
        if let (Some(m), Some(n)) = (mu, nu) {
            let d = (m * n - 1.0).norm();
            multiplier_defect = multiplier_defect.max(d);
            *flag = d < 1e-8;
        }
    }
    let prod = |a: &ScalarField, b: &ScalarField| a.zip(b, |p, q| p * q).with_periodic(periodic);
    let xi11 = prod(&psi.psi1, &phi.var1);
    let xi12 = prod(&psi.psi1, &phi.var2);
    let xi21 = prod(&psi.psi2, &phi.var1);
    let xi22 = prod(&psi.psi2, &phi.var2);
    let pairing = xi11.zip(&xi22, |a, b| a + b);
    let y = pairing.mean();
    let y_spread = pairing.values.iter().map(|v| (v - y).norm()).fold(0.0, f64::max) / y.norm().max(1e-300);
    Ok(EigenProducts { lambda: psi.lambda, xi11, xi12, xi21, xi22, y, y_spread, multiplier_defect })
}

fn connection_at(sol: &SinhGordonSolution, k: usize) -> PointConnection {
    PointConnection::new(sol.u.values[k], sol.u_z.values[k], sol.u_zbar.values[k])
}

fn max_modulus(a: &ScalarField, b: &ScalarField) -> f64 {
    a.max_abs().max(b.max_abs()).max(1e-300)
}

/// Stencil residual of `∂ψ = Uᵗψ`, `∂̄ψ = Vᵗψ`, relative to `max |ψ|`.
pub fn psi_residual(psi: &BAFunction, sol: &SinhGordonSolution) -> Result<f64> {
    system_residual(&psi.psi1, &psi.psi2, sol, psi.lambda, |u, v| (u.transpose(), v.transpose()))
}

/// Stencil residual of `∂φ = −Uφ`, `∂̄φ = −Vφ`, relative to `max |φ|`.
pub fn dual_residual(phi: &DualBAFunction, sol: &SinhGordonSolution) -> Result<f64> {
    system_residual(&phi.var1, &phi.var2, sol, phi.lambda, |u, v| (-u, -v))
}

fn system_residual(
    a: &ScalarField,
    b: &ScalarField,
    sol: &SinhGordonSolution,
    lambda: Complex64,
    coeffs: impl Fn(Mat2, Mat2) -> (Mat2, Mat2) + Sync,
) -> Result<f64> {
    let (az, bz, azb, bzb) = (a.dz()?, b.dz()?, a.dzbar()?, b.dzbar()?);
    let g = a.grid;
    let worst = (0..g.len())
        .into_par_iter()
        .map(|k| {
            let (u, v) = connection_at(sol, k).wirtinger(lambda);
            let (mu, mv) = coeffs(u, v);
            let w = [a.values[k], b.values[k]];
            let ru = mu.apply(w);
            let rv = mv.apply(w);
            (az.values[k] - ru[0])
                .norm()
                .max((bz.values[k] - ru[1]).norm())
                .max((azb.values[k] - rv[0]).norm())
                .max((bzb.values[k] - rv[1]).norm())
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst / max_modulus(a, b))
}

/// `ψ̃ = diag(λ^{-1/2}e^{u/2}, e^{-u/2})·ψ`.
#[derive(Clone, Debug)]
pub struct GaugedPsi {
    pub lambda: Complex64,
    pub psi1: ScalarField,
    pub psi2: ScalarField,
}

pub fn gauge_tilde(psi: &BAFunction, sol: &SinhGordonSolution) -> Result<GaugedPsi> {
    let s = sqrt_lambda(psi.lambda)?;
    let psi1 = psi.psi1.zip(&sol.u, |p, u| p * (u * 0.5).exp() / s);
    let psi2 = psi.psi2.zip(&sol.u, |p, u| p * (-u * 0.5).exp());
    Ok(GaugedPsi { lambda: psi.lambda, psi1, psi2 })
}

/// Determinant of the gauge matrix `diag(λ^{-1/2}e^{u/2}, e^{-u/2})`.
pub fn gauge_determinant(lambda: Complex64, u: f64) -> Result<Complex64> {
    let s = sqrt_lambda(lambda)?;
    Ok((u * 0.5).exp() / s * (-u * 0.5).exp())
}

/// Coefficient matrices of the gauged system at one point, given `λ^{1/2}`:
/// `∂ψ̃ = ½[[2∂u, iλ^{-1/2}], [iλ^{-1/2}, −2∂u]]ψ̃`,
/// `∂̄ψ̃ = ½[[0, iλ^{1/2}e^{2u}], [iλ^{1/2}e^{-2u}, 0]]ψ̃`.
pub fn gauged_coefficients(sqrt_lambda: Complex64, u: Complex64, u_z: Complex64) -> (Mat2, Mat2) {
    let s = sqrt_lambda;
    let e2 = (u * 2.0).exp();
    (
        Mat2::new(u_z, I * 0.5 / s, I * 0.5 / s, -u_z),
        Mat2::new(Complex64::default(), I * 0.5 * s * e2, I * 0.5 * s / e2, Complex64::default()),
    )
}

/// Stencil residual of the gauged system, relative to `max |ψ̃|`.
pub fn gauged_residual(g: &GaugedPsi, sol: &SinhGordonSolution) -> Result<f64> {
    let s = sqrt_lambda(g.lambda)?;
    let (az, bz, azb, bzb) = (g.psi1.dz()?, g.psi2.dz()?, g.psi1.dzbar()?, g.psi2.dzbar()?);
    let worst = (0..g.psi1.grid.len())
        .into_par_iter()
        .map(|k| {
            let (dz, dzb) = gauged_coefficients(s, sol.u.values[k], sol.u_z.values[k]);
            let w = [g.psi1.values[k], g.psi2.values[k]];
            let (ru, rv) = (dz.apply(w), dzb.apply(w));
            (az.values[k] - ru[0])
                .norm()
                .max((bz.values[k] - ru[1]).norm())
                .max((azb.values[k] - rv[0]).norm())
                .max((bzb.values[k] - rv[1]).norm())
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst / max_modulus(&g.psi1, &g.psi2))
}

/// Sampling of the spectral parameter near `0` (and its inverse near `∞`)
/// for the Puiseux fits.
#[derive(Clone, Debug, PartialEq)]
pub struct PuiseuxOptions {
    /// Direction `θ` of the ray `λ = t·e^{iθ}`.
    pub theta: f64,
    pub radii: Vec<f64>,
    pub frame: FrameOptions,
}

impl Default for PuiseuxOptions {
    fn default() -> Self {
        Self {
            theta: 0.0,
            radii: (0..6).map(|k| 1e-2 * 0.5f64.powi(k)).collect(),
            frame: FrameOptions { substeps: 16, ..FrameOptions::default() },
        }
    }
}

/// Fitted `∂u`, `∂̄u` from the expansions of `tr(diag(1,−1)·P)` at `λ = 0`
/// and `λ = ∞`.
#[derive(Clone, Debug)]
pub struct ResidueEstimates {
    pub du: ScalarField,
    pub dbar_u: ScalarField,
    /// Max deviation of the `λ⁰` coefficients of `λ^{-1/2}P₁₂` and `λ^{1/2}P₂₁`
    /// from `½e^{-u}` and `½e^{u}`.
    pub leading_defect: f64,
    /// Worst design-matrix condition number of the fits.
    pub condition: f64,
}

/// Odd powers of the local parameter kept in the trace fits.
const TRACE_POWERS: [i32; 3] = [1, 3, 5];
/// Powers kept in the fits of the off-diagonal entries.
const ENTRY_POWERS: [i32; 4] = [0, 1, 2, 3];

/// `P` on the plane-wave branch at each of `lambdas`.
pub fn p_matrices(sol: &SinhGordonSolution, lambdas: &[Complex64], frame: FrameOptions) -> Result<Vec<PMatrix>> {
    lambdas
        .iter()
        .map(|&lam| {
            let opts = PsiOptions { branch: Branch::PlaneWave, axis: None, frame };
            let (psi, partner) = solve_pair(sol, lam, opts)?;
            let phi = dual_from_sigma_star(&partner);
            Ok(PMatrix::from_products(&eigen_products(&psi, &phi)?))
        })
        .collect()
}

/// Recovers `∂u` and `∂̄u` pointwise from `P` sampled near `λ = 0` and `λ = ∞`:
/// `tr(diag(1,−1)P) = −2iλ^{1/2}∂u + O(λ^{3/2})` and
/// `tr(diag(1,−1)P) = 2iλ^{-1/2}∂̄u + O(λ^{-3/2})`.
pub fn p_matrix_and_residues(sol: &SinhGordonSolution, opts: &PuiseuxOptions) -> Result<ResidueEstimates> {
    let g = sol.grid();
    if !g.periodic[0] && !g.periodic[1] {
        return Err(BakerAkhiezerError::NoPeriodicAxis);
    }
    let dir = Complex64::from_polar(1.0, opts.theta);
    let small: Vec<Complex64> = opts.radii.iter().map(|&t| dir * t).collect();
    let large: Vec<Complex64> = opts.radii.iter().map(|&t| dir / t).collect();
    let p_small = p_matrices(sol, &small, opts.frame)?;
    let p_large = p_matrices(sol, &large, opts.frame)?;
    let s_small: Vec<Complex64> = small.iter().map(|&l| sqrt_lambda(l)).collect::<std::result::Result<_, _>>()?;
    let r_large: Vec<Complex64> =
        large.iter().map(|&l| sqrt_lambda(l).map(|s| s.inv())).collect::<std::result::Result<_, _>>()?;

    let per_point = |ps: &[PMatrix], f: &dyn Fn(Mat2, usize) -> Complex64| -> Vec<Vec<Complex64>> {
        (0..g.len()).map(|k| ps.iter().enumerate().map(|(n, p)| f(p.p.values[k], n)).collect()).collect()
    };
    let trace = |m: Mat2, _: usize| m.a - m.d;
    let fit_small = fit_series_many(&s_small, &per_point(&p_small, &trace), &TRACE_POWERS)?;
    let fit_large = fit_series_many(&r_large, &per_point(&p_large, &trace), &TRACE_POWERS)?;
    let p12 = per_point(&p_small, &|m, n| m.b / s_small[n]);
    let p21 = per_point(&p_small, &|m, n| m.c * s_small[n]);
    let fit12 = fit_series_many(&s_small, &p12, &ENTRY_POWERS)?;
    let fit21 = fit_series_many(&s_small, &p21, &ENTRY_POWERS)?;

    let du = Field::new(g, fit_small.iter().map(|f| I * 0.5 * f.coeffs[0]).collect());
    let dbar_u = Field::new(g, fit_large.iter().map(|f| -I * 0.5 * f.coeffs[0]).collect());
    let leading_defect = (0..g.len())
        .map(|k| {
            let u = sol.u.values[k];
            (fit12[k].coeffs[0] - (-u).exp() * 0.5).norm().max((fit21[k].coeffs[0] - u.exp() * 0.5).norm())
        })
        .fold(0.0, f64::max);
    let condition = [&fit_small, &fit_large, &fit12, &fit21]
        .iter()
        .map(|f| f.first().map_or(0.0, |s| s.condition))
        .fold(0.0, f64::max);
    Ok(ResidueEstimates { du, dbar_u, leading_defect, condition })
}

/// Coefficients of `ψ̃/(½(ψ̃₁ + ψ̃₂)) = (1, 1) − iλ^{1/2}(∂u, −∂u) + O(λ)`
/// fitted pointwise from samples near `λ = 0`.
#[derive(Clone, Debug)]
pub struct GaugedExpansion {
    pub leading: [ScalarField; 2],
    pub next: [ScalarField; 2],
    pub condition: f64,
}

impl GaugedExpansion {
    /// `∂u` read off the first component of the next-order coefficient.
    pub fn du(&self) -> ScalarField {
        self.next[0].map(|c| I * c)
    }
}

pub fn gauged_expansion(sol: &SinhGordonSolution, opts: &PuiseuxOptions) -> Result<GaugedExpansion> {
    let g = sol.grid();
    let dir = Complex64::from_polar(1.0, opts.theta);
    let lambdas: Vec<Complex64> = opts.radii.iter().map(|&t| dir * t).collect();
    let s: Vec<Complex64> = lambdas.iter().map(|&l| sqrt_lambda(l)).collect::<std::result::Result<_, _>>()?;
    let gauged: Vec<GaugedPsi> = lambdas
        .iter()
        .map(|&lam| {
            let opts = PsiOptions { branch: Branch::PlaneWave, axis: None, frame: opts.frame };
            let psi = solve_psi_with(sol, lam, [Complex64::new(1.0, 0.0), Complex64::default()], opts)?;
            gauge_tilde(&psi, sol)
        })
        .collect::<Result<_>>()?;
    let component = |c: usize| -> Vec<Vec<Complex64>> {
        (0..g.len())
            .map(|k| {
                gauged
                    .iter()
                    .map(|p| {
                        let (a, b) = (p.psi1.values[k], p.psi2.values[k]);
                        let w = if c == 0 { a } else { b };
                        w * 2.0 / (a + b)
                    })
                    .collect()
            })
            .collect()
    };
    let f1 = fit_series_many(&s, &component(0), &ENTRY_POWERS)?;
    let f2 = fit_series_many(&s, &component(1), &ENTRY_POWERS)?;
    let field =
        |fits: &[crate::algebra::SeriesFit], n: usize| Field::new(g, fits.iter().map(|f| f.coeffs[n]).collect());
    let condition = f1.first().map_or(0.0, |f| f.condition);
    Ok(GaugedExpansion { leading: [field(&f1, 0), field(&f2, 0)], next: [field(&f1, 1), field(&f2, 1)], condition })
}

/// Residual of `(∂∂̄ + cosh 2u)(ψ₁ψ₂) = 0` and the multiplier check
/// `(ψ₁ψ₂)(z₀ + γ) = μ²(ψ₁ψ₂)(z₀)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FermiCheck {
    /// Relative to `max |ψ₁ψ₂|`.
    pub residual: f64,
    pub multiplier_defect: f64,
}

pub fn fermi_kernel_check(psi: &BAFunction, sol: &SinhGordonSolution) -> Result<FermiCheck> {
    let f = psi.psi1.zip(&psi.psi2, |a, b| a * b);
    let lap = f.dz_dzbar()?;
    let residual = lap
        .values
        .iter()
        .zip(&f.values)
        .zip(&sol.u.values)
        .map(|((l, v), u)| (l + v * (u * 2.0).cosh()).norm())
        .fold(0.0, f64::max)
        / f.max_abs().max(1e-300);
    let mut multiplier_defect = 0.0f64;
    for a in 0..2 {
        if let (Some(c), Some(mu)) = (psi.monodromy[a], psi.multipliers[a]) {
            let w = c.apply(psi.seed);
            let here = psi.seed[0] * psi.seed[1];
            let there = w[0] * w[1];
            multiplier_defect =
                multiplier_defect.max((there - mu * mu * here).norm() / (mu * mu * here).norm().max(1e-300));
        }
    }
    Ok(FermiCheck { residual, multiplier_defect })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Grid;
    use crate::sinh_gordon::{one_dimensional, period_of, vacuum};
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn vacuum_torus(n: usize) -> SinhGordonSolution {
        vacuum(Grid::periodic(n, n, 2.0 * PI, 2.0 * PI).unwrap())
    }

    fn plane_wave(z: Complex64, sign: f64) -> Complex64 {
        (I * 0.5 * sign * (z * 0.5 + z.conj() * 2.0)).exp()
    }

    #[test]
    fn vacuum_psi_is_the_plane_wave() {
        let sol = vacuum_torus(128);
        let psi = solve_psi(&sol, c(4.0, 0.0), [c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(psi.normalization, Normalization::FirstComponent);
        let g = psi.grid();
        let mut worst = 0.0f64;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let z = g.z(i, j);
                let e = plane_wave(z, 1.0);
                let k = g.idx(i, j);
                worst =
                    worst.max(((psi.psi1.values[k] - e) / e).norm()).max(((psi.psi2.values[k] - e * 0.5) / e).norm());
            }
        }
        assert!(worst < 1e-9, "{worst}");
        let r = psi_residual(&psi, &sol).unwrap();
        assert!(r < 1e-5, "{r}");
    }

    #[test]
    fn vacuum_partner_has_inverse_multipliers() {
        let sol = vacuum_torus(128);
        let (psi, partner) = solve_pair(&sol, c(4.0, 0.0), PsiOptions::default()).unwrap();
        assert!((partner.seed[1] + 0.5).norm() < 1e-10, "{:?}", partner.seed);
        for a in 0..2 {
            let (m, n) = (psi.multipliers[a].unwrap(), partner.multipliers[a].unwrap());
            assert!((m * n - 1.0).norm() < 1e-8);
        }
        let phi = dual_from_sigma_star(&partner);
        let g = phi.var1.grid;
        for (i, j) in [(0, 0), (5, 90), (127, 127)] {
            let e = plane_wave(g.z(i, j), -1.0);
            let k = g.idx(i, j);
            assert!((phi.var1.values[k] - e * -0.5).norm() < 1e-8 * e.norm());
            assert!((phi.var2.values[k] + e).norm() < 1e-8 * e.norm());
        }
        assert!(dual_residual(&phi, &sol).unwrap() < 1e-5);
        let prods = eigen_products(&psi, &phi).unwrap();
        assert!((prods.y + 1.0).norm() < 1e-9, "{}", prods.y);
        assert!(prods.y_spread < 1e-9);
        assert!(prods.omega().max_abs() < 1e-9);
        let p = PMatrix::from_products(&prods);
        assert!(p.projector_defect() < 1e-10);
        assert!(p.trace_defect() < 1e-10);
    }

    #[test]
    fn sigma_star_applied_twice_negates() {
        let sol = vacuum_torus(16);
        let psi = solve_psi(&sol, c(4.0, 0.0), [c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let phi = dual_from_sigma_star(&psi);
        let back = dual_from_sigma_star(&BAFunction { psi1: phi.var1.clone(), psi2: phi.var2.clone(), ..psi.clone() });
        assert_eq!(back.var1.values, psi.psi1.map(|v| -v).values);
        assert_eq!(back.var2.values, psi.psi2.map(|v| -v).values);
    }

    #[test]
    fn mismatched_parameters_are_rejected() {
        let sol = vacuum_torus(16);
        let psi = solve_psi(&sol, c(4.0, 0.0), [c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let other = solve_psi(&sol, c(2.0, 0.5), [c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let phi = dual_from_sigma_star(&other);
        assert!(matches!(eigen_products(&psi, &phi), Err(BakerAkhiezerError::InconsistentLambda { .. })));
        assert!(matches!(
            solve_psi(&sol, c(0.0, 0.0), [c(1.0, 0.0), c(0.0, 0.0)]),
            Err(BakerAkhiezerError::LambdaZero)
        ));
        assert!(matches!(solve_psi(&sol, c(4.0, 0.0), [c(0.0, 0.0), c(0.0, 0.0)]), Err(BakerAkhiezerError::ZeroSeed)));
        // At λ = 1 the vacuum multipliers are both exactly one.
        let fine =
            PsiOptions { frame: FrameOptions { substeps: 32, ..FrameOptions::default() }, ..PsiOptions::default() };
        assert!(matches!(
            solve_psi_with(&vacuum_torus(64), c(1.0, 0.0), [c(1.0, 0.0), c(0.0, 0.0)], fine),
            Err(BakerAkhiezerError::DegenerateMonodromy { .. })
        ));
    }

    fn one_d_torus(n: usize) -> SinhGordonSolution {
        let t = period_of(0.5, 0.0).unwrap();
        one_dimensional(Grid::periodic(n, n, t, 2.0).unwrap(), 0.5, 0.0).unwrap()
    }

    #[test]
    fn one_dimensional_residual_converges() {
        let lam = c(0.3, 0.1);
        let res: Vec<f64> = [32, 64]
            .iter()
            .map(|&n| {
                let sol = one_d_torus(n);
                let psi = solve_psi(&sol, lam, [c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
                psi_residual(&psi, &sol).unwrap()
            })
            .collect();
        let order = crate::observed_order(res[0], res[1]);
        assert!(order >= 3.0, "{res:?} order {order}");
    }

    #[test]
    fn one_dimensional_pairing_is_constant() {
        let sol = one_d_torus(48);
        let (psi, partner) = solve_pair(&sol, c(0.3, 0.1), PsiOptions::default()).unwrap();
        let phi = dual_from_sigma_star(&partner);
        let prods = eigen_products(&psi, &phi).unwrap();
        assert!(prods.y_spread < 1e-8, "{}", prods.y_spread);
        assert!(prods.multiplier_defect < 1e-8);
        let dy = prods.pairing().dz().unwrap().max_abs() / prods.y.norm();
        assert!(dy < 1e-8, "{dy}");
        let p = PMatrix::from_products(&prods);
        assert!(p.projector_defect() < 1e-10);
        let fermi = fermi_kernel_check(&psi, &sol).unwrap();
        assert!(fermi.multiplier_defect < 1e-8, "{fermi:?}");
        assert!(fermi.residual < 1e-2, "{fermi:?}");
    }

    #[test]
    fn fermi_residual_converges() {
        let res: Vec<f64> = [32, 64]
            .iter()
            .map(|&n| {
                let sol = one_d_torus(n);
                let psi = solve_psi(&sol, c(0.3, 0.1), [c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
                fermi_kernel_check(&psi, &sol).unwrap().residual
            })
            .collect();
        assert!(crate::observed_order(res[0], res[1]) >= 3.0, "{res:?}");
    }

    #[test]
    fn vacuum_gauge() {
        let sol = vacuum_torus(128);
        let psi = solve_psi(&sol, c(4.0, 0.0), [c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let g = gauge_tilde(&psi, &sol).unwrap();
        let grid = g.psi1.grid;
        for (i, j) in [(0, 0), (7, 100), (127, 127)] {
            let e = plane_wave(grid.z(i, j), 1.0) * 0.5;
            let k = grid.idx(i, j);
            assert!((g.psi1.values[k] - e).norm() < 1e-9 * e.norm());
            assert!((g.psi2.values[k] - e).norm() < 1e-9 * e.norm());
        }
        // Stencil truncation at the open edges dominates.
        let r = gauged_residual(&g, &sol).unwrap();
        assert!(r < 1e-5, "{r}");
        // Exact substitution of the closed form ψ̃ = ½E(1, 1),
        // ∂E = (i/4)E, ∂̄E = iE.
        let (dz, dzb) = gauged_coefficients(c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
        let one = [c(1.0, 0.0), c(1.0, 0.0)];
        for (m, rate) in [(dz, I * 0.25), (dzb, I)] {
            let w = m.apply(one);
            assert!((w[0] - rate).norm() < 1e-15 && (w[1] - rate).norm() < 1e-15);
        }
        assert!((gauge_determinant(c(4.0, 0.0), 0.7).unwrap() - 0.5).norm() < 1e-15);
        assert!(matches!(
            gauge_tilde(&BAFunction { lambda: c(-1.0, 0.0), ..psi }, &sol),
            Err(BakerAkhiezerError::Algebra(_))
        ));
    }

    /// A 1D solution on a thin strip, periodic in `y` so the monodromy picks
    /// the branch.
    fn strip(nx: usize) -> SinhGordonSolution {
        let grid = Grid::new(nx, 8, 2.0 / nx as f64, 0.025, c(0.0, 0.0), [false, true]).unwrap();
        one_dimensional(grid, 0.5, 0.0).unwrap()
    }

    fn relative_interior(a: &ScalarField, b: &ScalarField) -> f64 {
        a.zip(b, |p, q| p - q).max_abs_interior(2) / b.max_abs_interior(2)
    }

    #[test]
    fn residues_recover_derivatives() {
        let sol = strip(64);
        let est = p_matrix_and_residues(&sol, &PuiseuxOptions::default()).unwrap();
        let du = sol.u.dz().unwrap();
        let dbar = sol.u.dzbar().unwrap();
        let e1 = relative_interior(&est.du, &du);
        let e2 = relative_interior(&est.dbar_u, &dbar);
        assert!(e1 <= 1e-3, "∂u {e1}");
        assert!(e2 <= 1e-3, "∂̄u {e2}");
        assert!(est.leading_defect < 1e-3, "{}", est.leading_defect);
        assert!(est.condition < crate::algebra::MAX_CONDITION);
    }

    #[test]
    fn residues_vanish_on_vacuum() {
        let grid = Grid::new(16, 8, 0.1, 0.025, c(0.0, 0.0), [false, true]).unwrap();
        let est = p_matrix_and_residues(&vacuum(grid), &PuiseuxOptions::default()).unwrap();
        assert!(est.du.max_abs() < 1e-8, "{}", est.du.max_abs());
        assert!(est.dbar_u.max_abs() < 1e-8);
    }

    #[test]
    fn gauged_expansion_recovers_derivative() {
        let sol = strip(64);
        let exp = gauged_expansion(&sol, &PuiseuxOptions::default()).unwrap();
        let du = sol.u.dz().unwrap();
        let e = relative_interior(&exp.du(), &du);
        assert!(e <= 1e-3, "{e}");
        let sym = relative_interior(&exp.next[1].map(|c| -I * c), &du);
        assert!(sym <= 1e-3, "{sym}");
        assert!((exp.leading[0].values[10] - 1.0).norm() < 1e-3);
    }
}
