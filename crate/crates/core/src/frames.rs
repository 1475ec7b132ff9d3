//! The λ-family of flat connections built from a sinh-Gordon solution, its
//! extended frames and monodromies, and the Sym–Bobenko immersion into
//! SU(2) ≅ S³ together with its moving-frame data.

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::{AlgebraError, Field, Grid, Mat2, MatField, ScalarField};
use crate::sinh_gordon::SinhGordonSolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("the spectral parameter must be nonzero")]
    LambdaZero,
    #[error("renormalisation correction {correction:e} exceeds 1e-2; refine the grid")]
    NonConvergent { correction: f64 },
    #[error("Sym points must differ")]
    SymPointsEqual,
    #[error("Sym point {0} is not on the unit circle")]
    SymPointsOffCircle(Complex64),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Residual of the sinh-Gordon equation above which assembling the
/// connection is flagged.
pub const RESIDUAL_WARNING: f64 = 1e-4;

/// Laurent coefficients `(λ⁻¹, λ⁰, λ¹)` of the two Wirtinger components of the
/// connection at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointConnection {
    pub dz: [Mat2; 3],
    pub dzbar: [Mat2; 3],
}

impl PointConnection {
    pub fn new(u: Complex64, u_z: Complex64, u_zbar: Complex64) -> Self {
        let (ep, em) = (u.exp() * 0.5, (-u).exp() * 0.5);
        let z = Complex64::new(0.0, 0.0);
        let dz = [Mat2::new(z, I * ep, z, z), Mat2::new(u_z * 0.5, z, I * em, -u_z * 0.5), Mat2::zero()];
        let dzbar = [Mat2::zero(), Mat2::new(-u_zbar * 0.5, I * em, z, u_zbar * 0.5), Mat2::new(z, z, I * ep, z)];
        Self { dz, dzbar }
    }

    /// `(U, V)` with `α = U dz + V dz̄`.
    pub fn wirtinger(&self, lambda: Complex64) -> (Mat2, Mat2) {
        let li = lambda.inv();
        (
            self.dz[0] * li + self.dz[1] + self.dz[2] * lambda,
            self.dzbar[0] * li + self.dzbar[1] + self.dzbar[2] * lambda,
        )
    }

    /// `(A, B) = (α(∂x), α(∂y)) = (U + V, i(U − V))`.
    pub fn cartesian(&self, lambda: Complex64) -> (Mat2, Mat2) {
        let (u, v) = self.wirtinger(lambda);
        (u + v, (u - v) * I)
    }
}

/// The connection `α_λ` attached to a sinh-Gordon solution; any `λ` can be
/// evaluated.
#[derive(Clone, Debug)]
pub struct ConnectionForm {
    pub sol: SinhGordonSolution,
    /// Set when the input solution's residual exceeds [`RESIDUAL_WARNING`].
    pub residual_warning: bool,
}

pub fn build_alpha(sol: &SinhGordonSolution) -> ConnectionForm {
    ConnectionForm { sol: sol.clone(), residual_warning: sol.residual_max > RESIDUAL_WARNING }
}

impl ConnectionForm {
    pub fn grid(&self) -> Grid {
        self.sol.grid()
    }

    pub fn point(&self, i: usize, j: usize) -> PointConnection {
        let k = self.grid().idx(i, j);
        PointConnection::new(self.sol.u.values[k], self.sol.u_z.values[k], self.sol.u_zbar.values[k])
    }

    /// `(A, B)` sampled on the grid.
    pub fn fields(&self, lambda: Complex64) -> (MatField, MatField) {
        let g = self.grid();
        let ab: Vec<(Mat2, Mat2)> =
            (0..g.len()).into_par_iter().map(|k| self.point(k % g.nx, k / g.nx).cartesian(lambda)).collect();
        let periodic = self.sol.u.periodic;
        let a = Field::new(g, ab.iter().map(|p| p.0).collect()).with_periodic(periodic);
        let b = Field::new(g, ab.iter().map(|p| p.1).collect()).with_periodic(periodic);
        (a, b)
    }

    /// `∂x B − ∂y A + [A, B]`, the coordinate form of `2dα + [α ∧ α]`.
    pub fn flatness_residual(&self, lambda: Complex64) -> Result<MatField, AlgebraError> {
        let (a, b) = self.fields(lambda);
        let bx = b.dx()?;
        let ay = a.dy()?;
        let comm = a.zip(&b, |p, q| p.commutator(&q));
        Ok(bx.zip(&ay, |p, q| p - q).zip(&comm, |p, q| p + q))
    }

    /// Max residual of each Laurent coefficient `λ⁻²…λ²` of the flatness
    /// residual, recovered exactly from five samples on the unit circle.
    pub fn flatness_coefficients(&self) -> Result<[f64; 5], AlgebraError> {
        let samples: Vec<(Complex64, MatField)> = (0..5)
            .map(|m| {
                let lam = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * m as f64 / 5.0);
                self.flatness_residual(lam).map(|r| (lam, r))
            })
            .collect::<Result<_, _>>()?;
        let mut out = [0.0; 5];
        for (slot, k) in (-2..=2).enumerate() {
            let g = self.grid();
            let mut worst = 0.0f64;
            for idx in 0..g.len() {
                let c = samples.iter().fold(Mat2::zero(), |acc, (lam, r)| acc + r.values[idx] * lam.powi(-k)) * 0.2;
                worst = worst.max(c.norm());
            }
            out[slot] = worst;
        }
        Ok(out)
    }

    /// `(u, ∂u, ∂̄u)`-based connection at fractional index `x` on row `j`.
    pub fn along_row(&self, x: f64, j: usize) -> PointConnection {
        let (u, uz, uzb) = self.sol.sample_row(x, j);
        PointConnection::new(u, uz, uzb)
    }

    pub fn along_column(&self, i: usize, y: f64) -> PointConnection {
        let (u, uz, uzb) = self.sol.sample_column(i, y);
        PointConnection::new(u, uz, uzb)
    }
}

/// How the generator acts on the unknown.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    /// `X' = X·G`
    Right,
    /// `X' = G·X`
    Left,
    /// `X' = X·G − G·X`
    Bracket,
}

/// Drift control applied every [`LineOptions::every`] steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Renorm {
    None,
    Det,
    Unitary,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineOptions {
    /// RK4 steps per grid cell.
    pub substeps: usize,
    pub renorm: Renorm,
    pub every: usize,
}

impl Default for LineOptions {
    fn default() -> Self {
        Self { substeps: 8, renorm: Renorm::Det, every: 16 }
    }
}

/// Largest renormalisation correction tolerated before giving up.
pub const MAX_CORRECTION: f64 = 1e-2;

fn apply(action: Action, x: Mat2, g: Mat2) -> Mat2 {
    match action {
        Action::Right => x * g,
        Action::Left => g * x,
        Action::Bracket => x * g - g * x,
    }
}

/// RK4 along a grid line: `cells` cells of length `h`, generator evaluated at
/// fractional cell positions. Returns the `cells + 1` values at the nodes and
/// the largest renormalisation correction applied.
pub fn integrate_line(
    start: Mat2,
    cells: usize,
    h: f64,
    opts: LineOptions,
    action: Action,
    generator: impl Fn(f64) -> Mat2,
) -> Result<(Vec<Mat2>, f64), FrameError> {
    let s = opts.substeps.max(1);
    let dt = h / s as f64;
    let mut out = Vec::with_capacity(cells + 1);
    let mut x = start;
    out.push(x);
    let mut worst = 0.0f64;
    let mut count = 0usize;
    for cell in 0..cells {
        for sub in 0..s {
            let t0 = cell as f64 + sub as f64 / s as f64;
            let half = 0.5 / s as f64;
            let (g0, g1, g2) = (generator(t0), generator(t0 + half), generator(t0 + 2.0 * half));
            let k1 = apply(action, x, g0);
            let k2 = apply(action, x + k1 * (0.5 * dt), g1);
            let k3 = apply(action, x + k2 * (0.5 * dt), g1);
            let k4 = apply(action, x + k3 * dt, g2);
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            count += 1;
            if count.is_multiple_of(opts.every) {
                let (y, corr) = renormalise(x, opts.renorm);
                worst = worst.max(corr);
                if corr > MAX_CORRECTION || !y.is_finite() {
                    return Err(FrameError::NonConvergent { correction: corr });
                }
                x = y;
            }
        }
        out.push(x);
    }
    Ok((out, worst))
}

fn renormalise(x: Mat2, mode: Renorm) -> (Mat2, f64) {
    let scale = x.norm().max(1.0);
    match mode {
        Renorm::None => (x, 0.0),
        Renorm::Det => {
            let (y, c) = x.unimodular();
            (y, c / scale)
        }
        Renorm::Unitary => {
            let (y, c) = x.project_su2();
            (y, c / scale)
        }
    }
}

/// Options for frame integration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameOptions {
    pub substeps: usize,
    pub every: usize,
    /// Integrate the row through `z₀` first and then the columns, instead of
    /// the default column-then-rows path.
    pub rows_first: bool,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self { substeps: 8, every: 16, rows_first: false }
    }
}

#[derive(Clone, Debug)]
pub struct ExtendedFrame {
    pub lambda: Complex64,
    pub frame: MatField,
    /// `M_i = F(z₀ + γ_i)` for each periodic axis.
    pub monodromy: [Option<Mat2>; 2],
    /// Larger eigenvalue of the first available monodromy.
    pub mu: Option<Complex64>,
    /// `F(z + γ₁)` along the base column, one value per row (periodic x only).
    pub row_ends: Vec<Mat2>,
    pub max_correction: f64,
}

impl ExtendedFrame {
    /// Monodromy eigenvalues `(μ, 1/μ)` for one axis.
    pub fn multipliers(&self, axis: usize) -> Option<(Complex64, Complex64)> {
        self.monodromy[axis].map(|m| m.eigenvalues())
    }
}

/// Constant gauge `diag(λ^{-1/4}, λ^{1/4})` that balances the off-diagonal
/// entries of the connection; unitary on the unit circle.
fn balance(lambda: Complex64) -> (Mat2, Mat2) {
    let d = lambda.powf(0.25);
    let dm = Mat2::diag(d.inv(), d);
    let dinv = Mat2::diag(d, d.inv());
    (dm, dinv)
}

/// `dF = F α_λ`, `F(z₀) = 1`.
pub fn integrate_frame(alpha: &ConnectionForm, lambda: Complex64) -> Result<ExtendedFrame, FrameError> {
    integrate_frame_with(alpha, lambda, FrameOptions::default())
}

pub fn integrate_frame_with(
    alpha: &ConnectionForm,
    lambda: Complex64,
    opts: FrameOptions,
) -> Result<ExtendedFrame, FrameError> {
    let on_circle = (lambda.norm() - 1.0).abs() < 1e-12;
    let system = SystemSpec {
        start: Mat2::identity(),
        action: Action::Right,
        transpose: false,
        renorm: if on_circle { Renorm::Unitary } else { Renorm::Det },
    };
    let sol = integrate_system(alpha, lambda, opts, system)?;
    let mu = sol.monodromy[0].or(sol.monodromy[1]).map(|m| m.eigenvalues().0);
    Ok(ExtendedFrame {
        lambda,
        frame: sol.values,
        monodromy: sol.monodromy,
        mu,
        row_ends: sol.row_ends,
        max_correction: sol.max_correction,
    })
}

/// A linear matrix system driven by the connection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemSpec {
    /// Value at `z₀`.
    pub start: Mat2,
    pub action: Action,
    /// Use the transposed generators `Aᵗ`, `Bᵗ`.
    pub transpose: bool,
    pub renorm: Renorm,
}

/// Solution of a [`SystemSpec`] on the grid.
#[derive(Clone, Debug)]
pub struct SystemSolution {
    /// Values at the grid nodes; flagged aperiodic.
    pub values: MatField,
    /// Value at `z₀ + γ_i` for each periodic axis.
    pub monodromy: [Option<Mat2>; 2],
    /// Value at `z + γ₁` along the base column, one per row (periodic x,
    /// column-first path only).
    pub row_ends: Vec<Mat2>,
    pub max_correction: f64,
}

/// Integrates `X_x = act(A, X)`, `X_y = act(B, X)` along the base column and
/// then every row (or the reverse), with the same RK4 scheme as the frame.
pub fn integrate_system(
    alpha: &ConnectionForm,
    lambda: Complex64,
    opts: FrameOptions,
    system: SystemSpec,
) -> Result<SystemSolution, FrameError> {
    if lambda.norm() == 0.0 {
        return Err(FrameError::LambdaZero);
    }
    let g = alpha.grid();
    let line = LineOptions { substeps: opts.substeps, renorm: system.renorm, every: opts.every };
    let (dm, dinv) = if system.transpose {
        let (a, b) = balance(lambda);
        (b, a)
    } else {
        balance(lambda)
    };
    let orient = |m: Mat2| if system.transpose { m.transpose() } else { m };
    let gen_x = |x: f64, j: usize| dinv * orient(alpha.along_row(x, j).cartesian(lambda).0) * dm;
    let gen_y = |i: usize, y: f64| dinv * orient(alpha.along_column(i, y).cartesian(lambda).1) * dm;
    let unbalance = |m: Mat2| dm * m * dinv;
    let start = dinv * system.start * dm;
    let action = system.action;

    let cells_x = if g.periodic[0] { g.nx } else { g.nx - 1 };
    let cells_y = if g.periodic[1] { g.ny } else { g.ny - 1 };
    let mut values = vec![Mat2::zero(); g.len()];
    let mut worst;
    let mut row_ends = Vec::new();
    let (m1, m2);
    if !opts.rows_first {
        let (col, c0) = integrate_line(start, cells_y, g.hy, line, action, |t| gen_y(0, t))?;
        worst = c0;
        let rows: Vec<(Vec<Mat2>, f64)> = (0..g.ny)
            .into_par_iter()
            .map(|j| integrate_line(col[j], cells_x, g.hx, line, action, |t| gen_x(t, j)))
            .collect::<Result<_, _>>()?;
        for (j, (row, c)) in rows.iter().enumerate() {
            worst = worst.max(*c);
            for i in 0..g.nx {
                values[g.idx(i, j)] = unbalance(row[i]);
            }
            if g.periodic[0] {
                row_ends.push(unbalance(row[g.nx]));
            }
        }
        m1 = g.periodic[0].then(|| unbalance(rows[0].0[g.nx]));
        m2 = g.periodic[1].then(|| unbalance(col[g.ny]));
    } else {
        let (row, c0) = integrate_line(start, cells_x, g.hx, line, action, |t| gen_x(t, 0))?;
        worst = c0;
        let cols: Vec<(Vec<Mat2>, f64)> = (0..g.nx)
            .into_par_iter()
            .map(|i| integrate_line(row[i], cells_y, g.hy, line, action, |t| gen_y(i, t)))
            .collect::<Result<_, _>>()?;
        for (i, (col, c)) in cols.iter().enumerate() {
            worst = worst.max(*c);
            for j in 0..g.ny {
                values[g.idx(i, j)] = unbalance(col[j]);
            }
        }
        m1 = g.periodic[0].then(|| unbalance(row[g.nx]));
        m2 = g.periodic[1].then(|| unbalance(cols[0].0[g.ny]));
    }
    // Solutions are periodic only when the monodromy is trivial; treat them
    // as open so derivatives use one-sided stencils.
    let values = Field::new(g, values).aperiodic();
    Ok(SystemSolution { values, monodromy: [m1, m2], row_ends, max_correction: worst })
}

/// Max difference between the column-first and row-first frames.
pub fn path_independence_defect(alpha: &ConnectionForm, lambda: Complex64) -> Result<f64, FrameError> {
    let a = integrate_frame(alpha, lambda)?;
    let b = integrate_frame_with(alpha, lambda, FrameOptions { rows_first: true, ..FrameOptions::default() })?;
    Ok(a.frame.zip(&b.frame, |p, q| p - q).max_abs())
}

/// `H = i(λ₀ + λ₁)/(λ₀ − λ₁)`.
pub fn mean_curvature(lambda0: Complex64, lambda1: Complex64) -> Complex64 {
    I * (lambda0 + lambda1) / (lambda0 - lambda1)
}

/// `Q = (i/4)(λ₁⁻¹ − λ₀⁻¹)`.
pub fn hopf(lambda0: Complex64, lambda1: Complex64) -> Complex64 {
    I * 0.25 * (lambda1.inv() - lambda0.inv())
}

/// The Sym–Bobenko surface `f = F_{λ₁}F_{λ₀}⁻¹` with its frame data.
#[derive(Clone, Debug)]
pub struct Immersion {
    pub lambda0: Complex64,
    pub lambda1: Complex64,
    pub f: MatField,
    pub normal: MatField,
    /// Exact tangents `∂f = F₁(U₁ − U₀)F₀⁻¹`, `∂̄f = F₁(V₁ − V₀)F₀⁻¹`.
    pub f_z: MatField,
    pub f_zbar: MatField,
    pub h: f64,
    pub q: Complex64,
    pub v2: ScalarField,
    pub u: ScalarField,
    pub u_z: ScalarField,
}

impl Immersion {
    pub fn grid(&self) -> Grid {
        self.f.grid
    }

    /// `4QQ̄(H² + 1) − 1`, zero up to rounding.
    pub fn useful_identity_defect(&self) -> f64 {
        (4.0 * self.q.norm_sqr() * (self.h * self.h + 1.0) - 1.0).abs()
    }
}

fn on_circle(l: Complex64) -> bool {
    (l.norm() - 1.0).abs() <= 1e-12
}

pub fn sym_bobenko(
    frame0: &ExtendedFrame,
    frame1: &ExtendedFrame,
    alpha: &ConnectionForm,
) -> Result<Immersion, FrameError> {
    let (l0, l1) = (frame0.lambda, frame1.lambda);
    for l in [l0, l1] {
        if !on_circle(l) {
            return Err(FrameError::SymPointsOffCircle(l));
        }
    }
    if (l0 - l1).norm() <= 1e-12 {
        return Err(FrameError::SymPointsEqual);
    }
    let hc = mean_curvature(l0, l1);
    assert!(hc.im.abs() <= 1e-12, "mean curvature must be real for Sym points on the circle");
    let h = hc.re;
    let q = hopf(l0, l1);
    let g = alpha.grid();
    let e = Mat2::normal_direction();
    let per_point: Vec<[Mat2; 4]> = (0..g.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % g.nx, k / g.nx);
            let f0 = frame0.frame.values[k];
            let f1 = frame1.frame.values[k];
            let f0_inv = f0.adjugate();
            let p = alpha.point(i, j);
            let (u0, v0) = p.wirtinger(l0);
            let (u1, v1) = p.wirtinger(l1);
            [f1 * f0_inv, f1 * e * f0_inv, f1 * (u1 - u0) * f0_inv, f1 * (v1 - v0) * f0_inv]
        })
        .collect();
    let periodic = [0, 1].map(|ax| match (frame0.monodromy[ax], frame1.monodromy[ax]) {
        (Some(a), Some(b)) => {
            let trivial = |m: Mat2, s: f64| (m - Mat2::identity() * s).max_abs() <= 1e-8;
            (trivial(a, 1.0) && trivial(b, 1.0)) || (trivial(a, -1.0) && trivial(b, -1.0))
        }
        _ => false,
    });
    let take = |n: usize| Field::new(g, per_point.iter().map(|p| p[n]).collect()).with_periodic(periodic);
    let u = alpha.sol.u.clone();
    let scale = h * h + 1.0;
    let v2 = u.map(|u| (2.0 * u).exp() / scale);
    Ok(Immersion {
        lambda0: l0,
        lambda1: l1,
        f: take(0),
        normal: take(1),
        f_z: take(2),
        f_zbar: take(3),
        h,
        q,
        v2,
        u,
        u_z: alpha.sol.u_z.clone(),
    })
}

/// Residual norm used for matrix-valued identities: sum of entry moduli.
pub fn entry_sum(m: &Mat2) -> f64 {
    m.entries().iter().map(|z| z.norm()).sum()
}

/// Unitarity defect `max |f f* − 1|`.
pub fn unitarity_defect(f: &MatField) -> f64 {
    f.values.iter().map(|m| (*m * m.adjoint() - Mat2::identity()).max_abs()).fold(0.0, f64::max)
}

/// `⟨∂f, ∂f⟩` with `∂f` from stencils; zero for a conformal map.
pub fn conformality_residual(imm: &Immersion) -> Result<f64, AlgebraError> {
    let fz = imm.f.dz()?;
    Ok(fz.values.iter().map(|m| m.ambient_inner(m).norm()).fold(0.0, f64::max))
}

/// Max of `|⟨∂f, ∂̄f⟩ − v²/2|` with stencil tangents.
pub fn conformal_factor_residual(imm: &Immersion) -> Result<f64, AlgebraError> {
    let fz = imm.f.dz()?;
    let fzb = imm.f.dzbar()?;
    Ok(fz
        .values
        .iter()
        .zip(&fzb.values)
        .zip(&imm.v2.values)
        .map(|((a, b), v2)| (a.ambient_inner(b) - v2 * 0.5).norm())
        .fold(0.0, f64::max))
}

/// Residuals of the three moving-frame equations
/// `∂N = −H∂f + 2v⁻²Q∂̄f`, `∂∂f = 2u_z∂f − QN`, `2∂∂̄f = −v²f + v²HN`,
/// every derivative taken with stencils.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrenetResiduals {
    pub normal: f64,
    pub second: f64,
    pub laplace: f64,
}

impl FrenetResiduals {
    pub fn max(&self) -> f64 {
        self.normal.max(self.second).max(self.laplace)
    }
}

pub fn frenet_residuals(imm: &Immersion) -> Result<FrenetResiduals, AlgebraError> {
    frenet_residuals_with_normal(imm, &imm.normal)
}

/// Frenet residuals with a caller-supplied normal field.
pub fn frenet_residuals_with_normal(imm: &Immersion, normal: &MatField) -> Result<FrenetResiduals, AlgebraError> {
    let (h, q) = (imm.h, imm.q);
    let fz = imm.f.dz()?;
    let fzb = imm.f.dzbar()?;
    let nz = normal.dz()?;
    let fzz = imm.f.dz_dz()?;
    let fzzb = imm.f.dz_dzbar()?;
    let g = imm.grid();
    let mut r = FrenetResiduals { normal: 0.0, second: 0.0, laplace: 0.0 };
    for k in 0..g.len() {
        let v2 = imm.v2.values[k];
        let n = normal.values[k];
        let e1 = nz.values[k] + fz.values[k] * h - fzb.values[k] * (2.0 * q / v2);
        let e2 = fzz.values[k] - fz.values[k] * (2.0 * imm.u_z.values[k]) + n * q;
        let e3 = fzzb.values[k] * 2.0 + imm.f.values[k] * v2 - n * (v2 * h);
        r.normal = r.normal.max(entry_sum(&e1));
        r.second = r.second.max(entry_sum(&e2));
        r.laplace = r.laplace.max(entry_sum(&e3));
    }
    Ok(r)
}

/// Max of `∂x ω_x + ∂y ω_y − H[ω_x, ω_y]` for `ω = f⁻¹df`: the coordinate
/// form of `2d*ω = H[ω ∧ ω]`. Along periodic axes `ω` is differentiated
/// again with the same stencil; along open axes the derivative is expanded
/// as `f⁻¹f_xx − ω_x²` so the one-sided edge errors are not differentiated
/// twice.
pub fn mean_curvature_relation_check(imm: &Immersion, h: f64) -> Result<f64, AlgebraError> {
    let f = &imm.f;
    let (fx, fy) = (f.dx()?, f.dy()?);
    let wx = f.zip(&fx, |f, d| f.adjugate() * d);
    let wy = f.zip(&fy, |f, d| f.adjugate() * d);
    let div_axis = |axis: usize, w: &MatField| -> Result<MatField, AlgebraError> {
        if f.periodic[axis] {
            w.diff(axis)
        } else {
            let fdd = f.diff2(axis)?;
            Ok(f.zip(&fdd, |f, d| f.adjugate() * d).zip(w, |a, w| a - w * w))
        }
    };
    let div = div_axis(0, &wx)?.zip(&div_axis(1, &wy)?, |a, b| a + b);
    let comm = wx.zip(&wy, |a, b| a.commutator(&b));
    Ok(div.zip(&comm, |d, c| d - c * h).values.iter().map(entry_sum).fold(0.0, f64::max))
}

/// Real coordinates of a quaternion `[[p, q], [−q̄, p̄]]` in ℝ⁴.
pub fn quaternion_coords(m: &Mat2) -> [f64; 4] {
    [m.a.re, m.a.im, m.b.re, m.b.im]
}

fn dot4(a: [f64; 4], b: [f64; 4]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| x * y).sum()
}

fn sub4(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

fn cot(e1: [f64; 4], e2: [f64; 4]) -> f64 {
    let d = dot4(e1, e2);
    let cross = (dot4(e1, e1) * dot4(e2, e2) - d * d).max(0.0).sqrt();
    d / cross
}

/// Discrete mean curvature of the sampled surface in S³ ⊂ ℝ⁴: the cotangent
/// Laplacian of the triangulated quad mesh, paired with the unit normal
/// orthogonal to `f`, `f_x`, `f_y`. Returns the mean and the max deviation
/// over the vertices with a full one-ring.
pub fn discrete_mean_curvature(imm: &Immersion) -> (f64, f64) {
    let g = imm.grid();
    let per = imm.f.periodic;
    let pos: Vec<[f64; 4]> = imm.f.values.iter().map(quaternion_coords).collect();
    let nrm: Vec<[f64; 4]> = imm.normal.values.iter().map(quaternion_coords).collect();
    let (nx, ny) = (g.nx as isize, g.ny as isize);
    let at = |i: isize, j: isize| -> Option<usize> {
        let i = if per[0] {
            i.rem_euclid(nx)
        } else if (0..nx).contains(&i) {
            i
        } else {
            return None;
        };
        let j = if per[1] {
            j.rem_euclid(ny)
        } else if (0..ny).contains(&j) {
            j
        } else {
            return None;
        };
        Some(g.idx(i as usize, j as usize))
    };
    // Triangles per quad (i,j): split along the (i,j)–(i+1,j+1) diagonal.
    // The one-ring of (i,j) in this triangulation, in cyclic order:
    const RING: [(isize, isize); 6] = [(1, 0), (1, 1), (0, 1), (-1, 0), (-1, -1), (0, -1)];
    let values: Vec<f64> = (0..g.len())
        .into_par_iter()
        .filter_map(|k| {
            let (i, j) = ((k % g.nx) as isize, (k / g.nx) as isize);
            let ring: Option<Vec<usize>> = RING.iter().map(|(di, dj)| at(i + di, j + dj)).collect();
            let ring = ring?;
            let p = pos[k];
            let mut lap = [0.0; 4];
            let mut area = 0.0;
            for t in 0..6 {
                let a = pos[ring[t]];
                let b = pos[ring[(t + 1) % 6]];
                let (ea, eb) = (sub4(a, p), sub4(b, p));
                // Triangle (p, a, b): the angle at b weights edge p–a, the
                // angle at a weights edge p–b.
                let cot_b = cot(sub4(p, b), sub4(a, b));
                let cot_a = cot(sub4(p, a), sub4(b, a));
                for c in 0..4 {
                    lap[c] += 0.5 * (cot_b * ea[c] + cot_a * eb[c]);
                }
                let d = dot4(ea, eb);
                area += 0.5 * (dot4(ea, ea) * dot4(eb, eb) - d * d).max(0.0).sqrt();
            }
            let lap: Vec<f64> = lap.iter().map(|x| x / (area / 3.0)).collect();
            let lap = [lap[0], lap[1], lap[2], lap[3]];
            // Discrete normal: the component of the frame normal orthogonal
            // to f and the two central-difference tangents.
            let tx = sub4(pos[at(i + 1, j)?], pos[at(i - 1, j)?]);
            let ty = sub4(pos[at(i, j + 1)?], pos[at(i, j - 1)?]);
            let mut basis: Vec<[f64; 4]> = Vec::new();
            for v in [p, tx, ty] {
                let mut w = v;
                for b in &basis {
                    let c = dot4(w, *b);
                    w = sub4(w, b.map(|x| x * c));
                }
                let n = dot4(w, w).sqrt();
                basis.push(w.map(|x| x / n));
            }
            let mut nd = nrm[k];
            for b in &basis {
                let c = dot4(nd, *b);
                nd = sub4(nd, b.map(|x| x * c));
            }
            let n = dot4(nd, nd).sqrt();
            let nd = nd.map(|x| x / n);
            // Δf = −2f + 2HN on a surface in the unit 3-sphere.
            Some(0.5 * dot4(lap, nd))
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    let dev = values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    (mean, dev)
}
