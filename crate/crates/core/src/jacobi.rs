//! Jacobi fields: homogeneous fields from eigenfunction products, the
//! tangential supplement of a normal field, the Killing-field criterion
//! `u̇ = 0`, and inhomogeneous fields with their period defects.

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::algebra::{cumulative_integral, AlgebraError, Field, Grid, Mat2, MatField, ScalarField};
use crate::baker_akhiezer::EigenProducts;
use crate::frames::{hopf, mean_curvature, Immersion};
use crate::sinh_gordon::SinhGordonSolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JacobiError {
    #[error("the Hopf differential vanishes for this Sym pair")]
    ZeroHopf,
    #[error("ω is not a Jacobi field (inhomogeneous residual {residual:e} exceeds 1e-3)")]
    NotJacobi { residual: f64 },
    #[error("g0 and g1 must lie in su(2)")]
    NotSkew,
    #[error("the grid has no periodic axis")]
    NoPeriod,
    #[error("fields live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

type Result<T> = std::result::Result<T, JacobiError>;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest inhomogeneous residual of `ω` accepted by [`supplement`].
pub const JACOBI_TOLERANCE: f64 = 1e-3;

/// The Sym pair and the constants it fixes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymContext {
    pub lambda0: Complex64,
    pub lambda1: Complex64,
    pub h: f64,
    pub q: Complex64,
}

impl SymContext {
    pub fn new(lambda0: Complex64, lambda1: Complex64) -> Result<Self> {
        let q = hopf(lambda0, lambda1);
        if q.norm() < 1e-14 {
            return Err(JacobiError::ZeroHopf);
        }
        Ok(Self { lambda0, lambda1, h: mean_curvature(lambda0, lambda1).re, q })
    }

    /// `v⁻² = (H² + 1)e^{−2u}`.
    pub fn inv_v2(&self, u: Complex64) -> Complex64 {
        (-u * 2.0).exp() * (self.h * self.h + 1.0)
    }
}

/// A homogeneous parametric Jacobi field built from eigenfunction products.
#[derive(Clone, Debug)]
pub struct JacobiData {
    pub lambda: Complex64,
    pub omega: ScalarField,
    pub tau: ScalarField,
    pub sigma: ScalarField,
    /// `∂ω − 2Qτ`.
    pub phi_aux: ScalarField,
    pub y: Complex64,
    pub ctx: SymContext,
}

impl JacobiData {
    /// The same field scaled so that `y = 1`.
    pub fn normalized(&self) -> Self {
        let s = self.y.inv();
        Self {
            omega: self.omega.map(|v| v * s),
            tau: self.tau.map(|v| v * s),
            sigma: self.sigma.map(|v| v * s),
            phi_aux: self.phi_aux.map(|v| v * s),
            y: Complex64::new(1.0, 0.0),
            ..self.clone()
        }
    }
}

/// `ω = ξ₁₁ − ξ₂₂`, `τ = iξ₂₁/(e^u Q)`, `σ = −iξ₁₂/(e^u Q̄)`, `φ_aux = ∂ω − 2Qτ`.
pub fn homogeneous_from_products(
    products: &EigenProducts,
    ctx: SymContext,
    sol: &SinhGordonSolution,
) -> Result<JacobiData> {
    if products.grid() != sol.grid() {
        return Err(JacobiError::GridMismatch);
    }
    let q = ctx.q;
    let periodic = products.xi11.periodic;
    let omega = products.omega();
    let tau = products.xi21.zip(&sol.u, |x, u| I * x / (u.exp() * q)).with_periodic(periodic);
    let sigma = products.xi12.zip(&sol.u, |x, u| -I * x / (u.exp() * q.conj())).with_periodic(periodic);
    let phi_aux = omega.dz()?.zip(&tau, |d, t| d - q * t * 2.0);
    Ok(JacobiData { lambda: products.lambda, omega, tau, sigma, phi_aux, y: products.y, ctx })
}

fn with_u(
    f: &ScalarField,
    sol: &SinhGordonSolution,
    g: impl Fn(Complex64, Complex64) -> Complex64 + Sync,
) -> ScalarField {
    f.zip(&sol.u, g)
}

/// `∂∂̄ω + cosh(2u)ω − rhs·e^{2u}` on the grid.
pub fn jacobi_operator(omega: &ScalarField, sol: &SinhGordonSolution, rhs: f64) -> Result<ScalarField> {
    let lap = omega.dz_dzbar()?;
    let body = with_u(omega, sol, |w, u| w * (u * 2.0).cosh() - (u * 2.0).exp() * rhs);
    Ok(lap.zip(&body, |a, b| a + b))
}

/// Residuals of the defining equations of a homogeneous field, relative to
/// `|y|` (the products carry an arbitrary eigenvector normalisation).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomogeneousResiduals {
    /// `∂∂̄ω + cosh(2u)ω`.
    pub jacobi: f64,
    /// `∂σ + 2v⁻²ωQ`.
    pub sigma_z: f64,
    /// `∂̄τ + 2v⁻²ωQ̄`.
    pub tau_zbar: f64,
}

pub fn homogeneous_residuals(jd: &JacobiData, sol: &SinhGordonSolution) -> Result<HomogeneousResiduals> {
    let ctx = jd.ctx;
    let scale = jd.y.norm();
    let jacobi = jacobi_operator(&jd.omega, sol, 0.0)?.max_abs() / scale;
    let w_inv = with_u(&jd.omega, sol, |w, u| w * ctx.inv_v2(u) * 2.0);
    let sigma_z = jd.sigma.dz()?.zip(&w_inv, |d, w| d + w * ctx.q).max_abs() / scale;
    let tau_zbar = jd.tau.dzbar()?.zip(&w_inv, |d, w| d + w * ctx.q.conj()).max_abs() / scale;
    Ok(HomogeneousResiduals { jacobi, sigma_z, tau_zbar })
}

/// Maxima of the residuals of the quadratic identity and the two linear
/// identities relating `ω`, `φ_aux` and `y`, relative to `|y|²` and `|y|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityResiduals {
    /// `(∂ω)² − φ_aux² − λ⁻¹(y² − ω²)`.
    pub quadratic: f64,
    /// `∂φ_aux − 2∂u∂ω`.
    pub first: f64,
    /// `λ⁻¹ω − 2φ_aux∂u + ∂²ω`.
    pub second: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        self.quadratic.max(self.first).max(self.second)
    }
}

pub fn check_identities_iv_v(jd: &JacobiData, sol: &SinhGordonSolution) -> Result<IdentityResiduals> {
    let li = jd.lambda.inv();
    let y2 = jd.y * jd.y;
    let dw = jd.omega.dz()?;
    let ddw = jd.omega.dz_dz()?;
    let dphi = jd.phi_aux.dz()?;
    let g = jd.omega.grid;
    let (mut quadratic, mut first, mut second) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..g.len() {
        let (w, p, uz) = (jd.omega.values[k], jd.phi_aux.values[k], sol.u_z.values[k]);
        quadratic = quadratic.max((dw.values[k] * dw.values[k] - p * p - li * (y2 - w * w)).norm());
        first = first.max((dphi.values[k] - uz * dw.values[k] * 2.0).norm());
        second = second.max((li * w - p * uz * 2.0 + ddw.values[k]).norm());
    }
    let scale = jd.y.norm();
    Ok(IdentityResiduals { quadratic: quadratic / (scale * scale), first: first / scale, second: second / scale })
}

/// `u̇ = iω(λ − λ₀)(λ − λ₁)/(λ(λ₀ − λ₁))`.
pub fn udot_from_field(jd: &JacobiData) -> ScalarField {
    let (l, l0, l1) = (jd.lambda, jd.ctx.lambda0, jd.ctx.lambda1);
    let factor = I * (l - l0) * (l - l1) / (l * (l0 - l1));
    jd.omega.map(|w| w * factor)
}

/// `½∂τ + τ∂u + ½∂̄σ + σ∂̄u − ωH + HḢ/(H² + 1)`.
pub fn udot_assembled(
    tau: &ScalarField,
    sigma: &ScalarField,
    omega: &ScalarField,
    h: f64,
    h_dot: f64,
    sol: &SinhGordonSolution,
) -> Result<ScalarField> {
    let dt = tau.dz()?;
    let ds = sigma.dzbar()?;
    let shift = h * h_dot / (h * h + 1.0);
    let g = tau.grid;
    let values = (0..g.len())
        .map(|k| {
            dt.values[k] * 0.5
                + tau.values[k] * sol.u_z.values[k]
                + ds.values[k] * 0.5
                + sigma.values[k] * sol.u_zbar.values[k]
                - omega.values[k] * h
                + shift
        })
        .collect();
    Ok(Field::new(g, values).with_periodic(common_periodic(&[tau, sigma, omega])))
}

fn common_periodic(fields: &[&ScalarField]) -> [bool; 2] {
    let mut p = [true, true];
    for f in fields {
        p[0] &= f.periodic[0];
        p[1] &= f.periodic[1];
    }
    p
}

/// Both routes to `u̇` for a homogeneous field; the disagreement and the
/// Jacobi residual are relative to `|y|`.
#[derive(Clone, Debug)]
pub struct UdotRoutes {
    pub formula: ScalarField,
    pub assembled: ScalarField,
    pub disagreement: f64,
    /// Homogeneous Jacobi residual of the formula field.
    pub jacobi_residual: f64,
}

pub fn udot_routes(jd: &JacobiData, sol: &SinhGordonSolution) -> Result<UdotRoutes> {
    let formula = udot_from_field(jd);
    let assembled = udot_assembled(&jd.tau, &jd.sigma, &jd.omega, jd.ctx.h, 0.0, sol)?;
    let scale = jd.y.norm();
    let disagreement = formula.zip(&assembled, |a, b| a - b).max_abs() / scale;
    let jacobi_residual = jacobi_operator(&formula, sol, 0.0)?.max_abs() / scale;
    Ok(UdotRoutes { formula, assembled, disagreement, jacobi_residual })
}

/// Solves `∂τ = a`, `∂̄τ = b` with `τ(z₀) = 0`: spectrally when both data
/// fields are doubly periodic, by marching quadrature (base column, then
/// rows) otherwise.
pub fn poincare_solve(a: &ScalarField, b: &ScalarField) -> Result<ScalarField> {
    if a.grid != b.grid {
        return Err(JacobiError::GridMismatch);
    }
    if a.periodic == [true, true] && b.periodic == [true, true] {
        Ok(spectral_solve(a, b))
    } else {
        Ok(marching_solve(a, b))
    }
}

fn marching_solve(a: &ScalarField, b: &ScalarField) -> ScalarField {
    let g = a.grid;
    let dy: Vec<Complex64> = (0..g.ny).map(|j| I * (a.at(0, j) - b.at(0, j))).collect();
    let column = cumulative_integral(&dy, g.hy);
    let mut values = vec![Complex64::default(); g.len()];
    for j in 0..g.ny {
        let dx: Vec<Complex64> = (0..g.nx).map(|i| a.at(i, j) + b.at(i, j)).collect();
        let row = cumulative_integral(&dx, g.hx);
        for i in 0..g.nx {
            values[g.idx(i, j)] = column[j] + row[i];
        }
    }
    Field::new(g, values).aperiodic()
}

fn fft2(values: &mut [Complex64], nx: usize, ny: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (fx, fy) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny))
    };
    for row in values.chunks_mut(nx) {
        fx.process(row);
    }
    let mut col = vec![Complex64::default(); ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = values[j * nx + i];
        }
        fy.process(&mut col);
        for j in 0..ny {
            values[j * nx + i] = col[j];
        }
    }
    if inverse {
        let s = 1.0 / (nx * ny) as f64;
        values.iter_mut().for_each(|v| *v *= s);
    }
}

fn wavenumber(m: usize, n: usize, length: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    if 2 * m == n {
        0.0
    } else if 2 * m < n {
        two_pi * m as f64 / length
    } else {
        two_pi * (m as f64 - n as f64) / length
    }
}

fn spectral_solve(a: &ScalarField, b: &ScalarField) -> ScalarField {
    let g = a.grid;
    let (lx, ly) = g.extent();
    let (abar, bbar) = (a.mean(), b.mean());
    let mut ah: Vec<Complex64> = a.values.iter().map(|v| v - abar).collect();
    let mut bh: Vec<Complex64> = b.values.iter().map(|v| v - bbar).collect();
    fft2(&mut ah, g.nx, g.ny, false);
    fft2(&mut bh, g.nx, g.ny, false);
    let mut th = vec![Complex64::default(); g.len()];
    for j in 0..g.ny {
        let ky = wavenumber(j, g.ny, ly);
        for i in 0..g.nx {
            let kx = wavenumber(i, g.nx, lx);
            // ∂e^{i(kx x + ky y)} = p·e, ∂̄e = q·e.
            let p = Complex64::new(ky, kx) * 0.5;
            let q = Complex64::new(-ky, kx) * 0.5;
            let den = p.norm_sqr() + q.norm_sqr();
            let k = g.idx(i, j);
            if den > 0.0 {
                th[k] = (p.conj() * ah[k] + q.conj() * bh[k]) / den;
            }
        }
    }
    fft2(&mut th, g.nx, g.ny, true);
    let linear = abar.norm() + bbar.norm() > 0.0;
    let values: Vec<Complex64> = (0..g.len())
        .map(|k| {
            let dz = g.z(k % g.nx, k / g.nx) - g.origin;
            th[k] + abar * dz + bbar * dz.conj() - th[0]
        })
        .collect();
    let field = Field::new(g, values);
    if linear {
        field.aperiodic()
    } else {
        field.with_periodic([true, true])
    }
}

/// The cross-derivative check differentiates data that already contain
/// second derivatives of `ω`; near an open edge the composed one-sided
/// stencils say nothing about the equations, so those nodes are skipped.
pub const COMPATIBILITY_MARGIN: usize = 3;

/// Tangential supplement of a normal field `ωN`.
#[derive(Clone, Debug)]
pub struct Supplement {
    pub tau: ScalarField,
    pub sigma: ScalarField,
    /// Max of `∂̄(∂τ data) − ∂(∂̄τ data)` and its analogue for `σ`, over
    /// points at least [`COMPATIBILITY_MARGIN`] nodes from an open edge.
    pub compatibility: f64,
    /// Inhomogeneous Jacobi residual of the input `ω`.
    pub jacobi_residual: f64,
}

/// Integrates `∂τ = (Q̇ + ∂²ω − 2∂u∂ω)/(2Q)`, `∂̄τ = −2v⁻²ωQ̄` and the
/// conjugate system for `σ`, with `τ(z₀) = σ(z₀) = 0`. `Ḣ` fixes the
/// right-hand side of the inhomogeneous Jacobi equation that `ω` must solve.
pub fn supplement(
    omega: &ScalarField,
    q_dot: Complex64,
    h_dot: f64,
    ctx: SymContext,
    sol: &SinhGordonSolution,
) -> Result<Supplement> {
    let (h, q) = (ctx.h, ctx.q);
    let rhs = h_dot / (2.0 * (h * h + 1.0));
    let jacobi_residual = jacobi_operator(omega, sol, rhs)?.max_abs();
    if jacobi_residual > JACOBI_TOLERANCE {
        return Err(JacobiError::NotJacobi { residual: jacobi_residual });
    }
    let (dw, dbw, ddw, dbdbw) = (omega.dz()?, omega.dzbar()?, omega.dz_dz()?, omega.dzbar_dzbar()?);
    let g = omega.grid;
    let periodic = omega.periodic;
    let mk = |f: &dyn Fn(usize) -> Complex64| Field::new(g, (0..g.len()).map(f).collect()).with_periodic(periodic);
    let tau_z = mk(&|k| (q_dot + ddw.values[k] - sol.u_z.values[k] * dw.values[k] * 2.0) / (q * 2.0));
    let tau_zb = mk(&|k| -omega.values[k] * ctx.inv_v2(sol.u.values[k]) * q.conj() * 2.0);
    let sigma_z = mk(&|k| -omega.values[k] * ctx.inv_v2(sol.u.values[k]) * q * 2.0);
    let sigma_zb =
        mk(&|k| (q_dot.conj() + dbdbw.values[k] - sol.u_zbar.values[k] * dbw.values[k] * 2.0) / (q.conj() * 2.0));
    let cross = |dz_data: &ScalarField, dzb_data: &ScalarField| -> Result<f64> {
        let d = dz_data.dzbar()?.zip(&dzb_data.dz()?, |p, q| p - q);
        Ok(d.max_abs_interior(COMPATIBILITY_MARGIN))
    };
    let compatibility = cross(&tau_z, &tau_zb)?.max(cross(&sigma_z, &sigma_zb)?);
    let tau = poincare_solve(&tau_z, &tau_zb)?;
    let sigma = poincare_solve(&sigma_z, &sigma_zb)?;
    Ok(Supplement { tau, sigma, compatibility, jacobi_residual })
}

/// Decomposition `ḟ = τ∂f + σ∂̄f + ωN` of the field induced by an
/// infinitesimal isometry `ḟ = g₁f − fg₀`.
#[derive(Clone, Debug)]
pub struct KillingDecomposition {
    pub tau: ScalarField,
    pub sigma: ScalarField,
    pub omega: ScalarField,
    /// Component of `ḟ` along `f`, zero for a tangent-plus-normal field.
    pub radial: ScalarField,
    pub udot: ScalarField,
    pub udot_max: f64,
}

pub fn killing_from_isometry(g0: Mat2, g1: Mat2, imm: &Immersion) -> Result<KillingDecomposition> {
    if !g0.is_su2_algebra(1e-12) || !g1.is_su2_algebra(1e-12) {
        return Err(JacobiError::NotSkew);
    }
    let fdot = imm.f.map(|f| g1 * f - f * g0);
    decompose(&fdot, imm)
}

/// Decomposes an arbitrary variation `ḟ` in the moving frame and assembles
/// `u̇` with `Ḣ = 0`.
pub fn decompose(fdot: &MatField, imm: &Immersion) -> Result<KillingDecomposition> {
    let g = imm.grid();
    let periodic = fdot.periodic;
    let mk = |f: &dyn Fn(usize) -> Complex64| Field::new(g, (0..g.len()).map(f).collect()).with_periodic(periodic);
    let omega = mk(&|k| fdot.values[k].ambient_inner(&imm.normal.values[k]));
    let tau = mk(&|k| fdot.values[k].ambient_inner(&imm.f_zbar.values[k]) * 2.0 / imm.v2.values[k]);
    let sigma = mk(&|k| fdot.values[k].ambient_inner(&imm.f_z.values[k]) * 2.0 / imm.v2.values[k]);
    let radial = mk(&|k| fdot.values[k].ambient_inner(&imm.f.values[k]));
    let dt = tau.dz()?;
    let ds = sigma.dzbar()?;
    let udot = mk(&|k| {
        let uz = imm.u_z.values[k];
        dt.values[k] * 0.5 + tau.values[k] * uz + ds.values[k] * 0.5 + sigma.values[k] * uz.conj()
            - omega.values[k] * imm.h
    });
    let udot_max = udot.max_abs();
    Ok(KillingDecomposition { tau, sigma, omega, radial, udot, udot_max })
}

/// `𝔥 = −Ḣ/(2(H² + 1))`.
pub fn hfrak(h: f64, h_dot: f64) -> f64 {
    -h_dot / (2.0 * (h * h + 1.0))
}

/// One row of the period-defect table: measured and predicted
/// `Δ_γ(½∂τ± + τ±∂u)` and `Δ_γ(½∂̄σ± + σ±∂̄u)`, with `Δ_γ` = translate − identity.
#[derive(Clone, Debug, PartialEq)]
pub struct DefectRow {
    pub axis: usize,
    pub gamma: Complex64,
    /// Order: τ⁺, τ⁻, σ⁺, σ⁻; values at the interior reference point.
    pub measured: [Complex64; 4],
    pub predicted: [Complex64; 4],
    /// Max over interior points of `|measured − predicted|` per entry.
    pub error: [f64; 4],
    /// Same with the sign of the path-integral term in the σ⁻ formula flipped.
    pub sigma_minus_flipped_error: f64,
}

#[derive(Clone, Debug)]
pub struct InhomogeneousJacobi {
    pub hfrak: f64,
    pub h_dot: f64,
    pub omega_plus: ScalarField,
    pub omega_minus: ScalarField,
    pub omega_hat: ScalarField,
    pub tau_plus: ScalarField,
    pub tau_minus: ScalarField,
    pub sigma_plus: ScalarField,
    pub sigma_minus: ScalarField,
    /// `∂∂̄ω̂ + cosh(2u)ω̂ − Ḣe^{2u}/(2(H² + 1))`.
    pub residual: f64,
    pub period_defects: Vec<DefectRow>,
}

impl InhomogeneousJacobi {
    pub fn tau_hat(&self) -> ScalarField {
        self.tau_plus.zip(&self.tau_minus, |a, b| a + b)
    }

    pub fn sigma_hat(&self) -> ScalarField {
        self.sigma_plus.zip(&self.sigma_minus, |a, b| a + b)
    }
}

/// Periodic input fields tiled onto a longer open lattice.
struct Tiled {
    grid: Grid,
    u: ScalarField,
    uz: ScalarField,
    uzb: ScalarField,
}

fn tile(sol: &SinhGordonSolution, reps: [usize; 2]) -> Result<Tiled> {
    let g = sol.grid();
    let grid = Grid::new(
        g.nx * reps[0],
        g.ny * reps[1],
        g.hx,
        g.hy,
        g.origin,
        [g.periodic[0] && reps[0] == 1, g.periodic[1] && reps[1] == 1],
    )?;
    let pick = |f: &ScalarField| Field::from_fn(grid, |_, i, j| f.at(i % g.nx, j % g.ny)).with_periodic(grid.periodic);
    Ok(Tiled { grid, u: pick(&sol.u), uz: pick(&sol.u_z), uzb: pick(&sol.u_zbar) })
}

/// The path integral `∫₀^z 2(∂u)² dw − cosh(2u) dw̄` along the base column and
/// then the rows.
fn path_integral(t: &Tiled) -> ScalarField {
    let a = t.uz.map(|d| d * d * 2.0);
    let b = t.u.map(|u| -(u * 2.0).cosh());
    marching_solve(&a.with_periodic([false, false]), &b.with_periodic([false, false]))
}

struct Pieces {
    omega_plus: ScalarField,
    omega_minus: ScalarField,
    tau_plus: ScalarField,
    tau_minus: ScalarField,
    integral: ScalarField,
}

fn pieces(t: &Tiled, hf: f64, ctx: SymContext) -> Result<Pieces> {
    let g = t.grid;
    let q = ctx.q;
    let uzz = t.uz.dz()?;
    let integral = path_integral(t);
    let z = Field::from_fn(g, |z, _, _| z - g.origin);
    let mk = |f: &dyn Fn(usize) -> Complex64| Field::new(g, (0..g.len()).map(f).collect()).aperiodic();
    let omega_plus = mk(&|k| (z.values[k] * t.uz.values[k] - 0.5) * hf);
    let omega_minus = mk(&|k| (z.values[k].conj() * t.uzb.values[k] - 0.5) * hf);
    let tau_plus = mk(&|k| {
        let (zk, uz) = (z.values[k], t.uz.values[k]);
        let d_omega = (uz + zk * uzz.values[k]) * hf;
        d_omega / (q * 2.0) - zk * uz * uz * hf / (q * 2.0) - integral.values[k] * hf / (q * 4.0)
    });
    let tau_minus =
        mk(&|k| z.values[k] * ctx.h * hf + z.values[k].conj() * (-t.u.values[k] * 2.0).exp() * hf / (q * 4.0));
    Ok(Pieces { omega_plus, omega_minus, tau_plus, tau_minus, integral })
}

/// Assembles `𝔥`, `ω̂ = ω⁺ + ω⁻`, `τ±` and `σ± = conj(τ∓)` and measures the
/// period defects on a lattice tiled over two periods per periodic axis.
pub fn inhomogeneous_build(sol: &SinhGordonSolution, ctx: SymContext, h_dot: f64) -> Result<InhomogeneousJacobi> {
    let g = sol.grid();
    if !g.periodic[0] && !g.periodic[1] {
        return Err(JacobiError::NoPeriod);
    }
    let hf = hfrak(ctx.h, h_dot);
    let base = pieces(&tile(sol, [1, 1])?, hf, ctx)?;
    let omega_hat = base.omega_plus.zip(&base.omega_minus, |a, b| a + b);
    let rhs = h_dot / (2.0 * (ctx.h * ctx.h + 1.0));
    let residual = jacobi_operator(&omega_hat, sol, rhs)?.max_abs();
    let sigma_plus = base.tau_minus.conj();
    let sigma_minus = base.tau_plus.conj();

    let mut period_defects = Vec::new();
    for axis in 0..2 {
        if !g.periodic[axis] {
            continue;
        }
        period_defects.push(defect_row(sol, ctx, hf, axis)?);
    }
    Ok(InhomogeneousJacobi {
        hfrak: hf,
        h_dot,
        omega_plus: base.omega_plus,
        omega_minus: base.omega_minus,
        omega_hat,
        tau_plus: base.tau_plus,
        tau_minus: base.tau_minus,
        sigma_plus,
        sigma_minus,
        residual,
        period_defects,
    })
}

fn defect_row(sol: &SinhGordonSolution, ctx: SymContext, hf: f64, axis: usize) -> Result<DefectRow> {
    let g = sol.grid();
    let reps = if axis == 0 { [2, 1] } else { [1, 2] };
    let t = tile(sol, reps)?;
    let p = pieces(&t, hf, ctx)?;
    let q = ctx.q;
    let (uz, uzb) = (&t.uz, &t.uzb);
    // X_τ = ½∂τ + τ∂u, X_σ = ½∂̄σ + σ∂̄u with σ± = conj(τ∓).
    let x_tau = |tau: &ScalarField| -> Result<ScalarField> {
        let d = tau.dz()?;
        Ok(Field::new(t.grid, (0..t.grid.len()).map(|k| d.values[k] * 0.5 + tau.values[k] * uz.values[k]).collect()))
    };
    let x_sigma = |sigma: &ScalarField| -> Result<ScalarField> {
        let d = sigma.dzbar()?;
        Ok(Field::new(t.grid, (0..t.grid.len()).map(|k| d.values[k] * 0.5 + sigma.values[k] * uzb.values[k]).collect()))
    };
    let xs = [x_tau(&p.tau_plus)?, x_tau(&p.tau_minus)?, x_sigma(&p.tau_minus.conj())?, x_sigma(&p.tau_plus.conj())?];
    let u3 = uz.dz()?.dz()?;
    let ub3 = uzb.dzbar()?.dzbar()?;
    let gamma = g.periods()[axis].expect("axis is periodic");
    let (n, shift) = if axis == 0 { (g.nx, 1) } else { (g.ny, t.grid.nx) };
    let margin = 3;
    let mut error = [0.0f64; 4];
    let mut flipped = 0.0f64;
    let mut measured = [Complex64::default(); 4];
    let mut predicted = [Complex64::default(); 4];
    let reference = (n / 4, 0);
    let (other_n, _) = if axis == 0 { (g.ny, 0) } else { (g.nx, 0) };
    for along in margin..n - margin {
        for across in 0..other_n {
            let (i, j) = if axis == 0 { (along, across) } else { (across, along) };
            // Keep away from the one-sided stencils on the open tiled axis
            // and on any open axis across.
            let (ci, cj) = (i, j);
            if !g.periodic[1 - axis] && (across < margin || across + margin >= other_n) {
                continue;
            }
            let k = t.grid.idx(ci, cj);
            let kt = k + n * shift;
            let integral_gamma = p.integral.values[kt] - p.integral.values[k];
            let (d, db) = (uz.values[k], uzb.values[k]);
            let pred = [
                hf * gamma / (q * 4.0) * (u3.values[k] - d * d * d * 2.0) - hf * d / (q * 4.0) * integral_gamma,
                gamma * ctx.h * hf * d,
                gamma.conj() * ctx.h * hf * db,
                hf * gamma.conj() / (q.conj() * 4.0) * (ub3.values[k] - db * db * db * 2.0)
                    + hf * db / (q.conj() * 4.0) * integral_gamma.conj(),
            ];
            let flipped_pred = pred[3] - hf * db / (q.conj() * 4.0) * integral_gamma.conj() * 2.0;
            for m in 0..4 {
                let meas = xs[m].values[kt] - xs[m].values[k];
                error[m] = error[m].max((meas - pred[m]).norm());
                if m == 3 {
                    flipped = flipped.max((meas - flipped_pred).norm());
                }
                if (along, across) == reference {
                    measured[m] = meas;
                    predicted[m] = pred[m];
                }
            }
        }
    }
    Ok(DefectRow { axis, gamma, measured, predicted, error, sigma_minus_flipped_error: flipped })
}
