//! Solutions of `∂∂̄u + ½ sinh 2u = 0` sampled on a grid.
//!
//! Two generators ship: the vacuum `u ≡ 0` and solutions depending on `x`
//! only, which reduce to the pendulum `u'' + 2 sinh 2u = 0` because
//! `∂∂̄ = ¼Δ`.

use num_complex::Complex64;
use thiserror::Error;

use crate::algebra::{AlgebraError, Grid, ScalarField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SinhGordonError {
    #[error("orbit period {period} does not divide the x-extent {extent}")]
    NotPeriodicOnGrid { period: f64, extent: f64 },
    #[error("initial data must be finite (u0 = {u0}, du0 = {du0})")]
    NonFinite { u0: f64, du0: f64 },
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Substeps of the pendulum integrator per grid cell.
pub const PROFILE_REFINEMENT: usize = 8;

/// Tolerance on the period search and on the period/extent match.
const PERIOD_TOL: f64 = 1e-12;
const EXTENT_TOL: f64 = 1e-8;

/// Fine samples of a solution depending on `x` only, at spacing `hx/8`.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub step: f64,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SinhGordonSolution {
    pub u: ScalarField,
    pub u_z: ScalarField,
    pub u_zbar: ScalarField,
    pub residual_max: f64,
    /// Pendulum data for 1D solutions: initial values, energy, fine profile.
    pub orbit: Option<Orbit>,
}

#[derive(Clone, Debug)]
pub struct Orbit {
    pub u0: f64,
    pub du0: f64,
    pub energy: f64,
    pub period: Option<f64>,
    pub profile: Profile,
}

impl SinhGordonSolution {
    pub fn grid(&self) -> Grid {
        self.u.grid
    }

    /// `(u, ∂u, ∂̄u)` at fractional index `x` on grid row `j`. For 1D
    /// solutions the fine pendulum profile is used directly, with quintic
    /// Hermite interpolation (from `u`, `u'` and `u'' = −2 sinh 2u`) between
    /// its samples.
    pub fn sample_row(&self, x: f64, j: usize) -> (Complex64, Complex64, Complex64) {
        if let Some(orbit) = &self.orbit {
            if let Some((u, du)) = profile_at(&orbit.profile, x) {
                let uz = Complex64::new(0.5 * du, 0.0);
                return (u.into(), uz, uz);
            }
        }
        (self.u.interp_x(x, j), self.u_z.interp_x(x, j), self.u_zbar.interp_x(x, j))
    }

    /// `(u, ∂u, ∂̄u)` at fractional index `y` on grid column `i`.
    pub fn sample_column(&self, i: usize, y: f64) -> (Complex64, Complex64, Complex64) {
        if self.orbit.is_some() {
            return self.sample_row(i as f64, 0);
        }
        (self.u.interp_y(i, y), self.u_z.interp_y(i, y), self.u_zbar.interp_y(i, y))
    }
}

/// `u ≡ 0`.
pub fn vacuum(grid: Grid) -> SinhGordonSolution {
    let zero = ScalarField::constant(grid, Complex64::new(0.0, 0.0));
    SinhGordonSolution { u: zero.clone(), u_z: zero.clone(), u_zbar: zero, residual_max: 0.0, orbit: None }
}

/// Pendulum energy `½(u')² + cosh 2u`.
pub fn energy(u: f64, du: f64) -> f64 {
    0.5 * du * du + (2.0 * u).cosh()
}

fn pendulum_rhs(s: [f64; 2]) -> [f64; 2] {
    [s[1], -2.0 * (2.0 * s[0]).sinh()]
}

fn rk4(s: [f64; 2], h: f64) -> [f64; 2] {
    let add = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * b[0], a[1] + t * b[1]];
    let k1 = pendulum_rhs(s);
    let k2 = pendulum_rhs(add(s, k1, 0.5 * h));
    let k3 = pendulum_rhs(add(s, k2, 0.5 * h));
    let k4 = pendulum_rhs(add(s, k3, h));
    [
        s[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Integrate the pendulum from `(u0, du0)` with `n` RK4 steps of size `h`,
/// returning `n + 1` states.
pub fn pendulum_orbit(u0: f64, du0: f64, h: f64, n: usize) -> Profile {
    let mut u = Vec::with_capacity(n + 1);
    let mut du = Vec::with_capacity(n + 1);
    let mut s = [u0, du0];
    u.push(s[0]);
    du.push(s[1]);
    for _ in 0..n {
        s = rk4(s, h);
        u.push(s[0]);
        du.push(s[1]);
    }
    Profile { step: h, u, du }
}

/// Period of the pendulum orbit through `(u0, du0)`, or `None` at the rest
/// point. The return time to the section through the start point normal to
/// the flow is located by bisection.
pub fn period_of(u0: f64, du0: f64) -> Option<f64> {
    let start = [u0, du0];
    let v = pendulum_rhs(start);
    if v[0].hypot(v[1]) < 1e-14 {
        return None;
    }
    let section = |s: [f64; 2]| (s[0] - start[0]) * v[0] + (s[1] - start[1]) * v[1];
    let h = 1e-3;
    let mut t = 0.0;
    let mut s = start;
    let mut left = false;
    // Orbits are bounded level sets of a convex energy: the section line
    // meets each one exactly twice, so the first upward crossing is the return.
    for _ in 0..100_000_000usize {
        let next = rk4(s, h);
        let (g0, g1) = (section(s), section(next));
        if g1 < 0.0 {
            left = true;
        }
        if left && g0 < 0.0 && g1 >= 0.0 {
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > PERIOD_TOL {
                let mid = 0.5 * (lo + hi);
                if section(rk4(s, mid)) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(t + 0.5 * (lo + hi));
        }
        s = next;
        t += h;
    }
    None
}

/// A solution depending on `x` only, started from `u(x₀) = u0`, `u'(x₀) = du0`
/// at the grid origin and extended constantly in `y`.
pub fn one_dimensional(grid: Grid, u0: f64, du0: f64) -> Result<SinhGordonSolution, SinhGordonError> {
    if !(u0.is_finite() && du0.is_finite()) {
        return Err(SinhGordonError::NonFinite { u0, du0 });
    }
    let period = period_of(u0, du0);
    let (lx, _) = grid.extent();
    if grid.periodic[0] {
        if let Some(t) = period {
            let k = (lx / t).round().max(1.0);
            if (lx - k * t).abs() > EXTENT_TOL {
                return Err(SinhGordonError::NotPeriodicOnGrid { period: t, extent: lx });
            }
        }
    }
    let r = PROFILE_REFINEMENT;
    // Two extra cells cover the wrap-around samples used by the frame integrator.
    let profile = pendulum_orbit(u0, du0, grid.hx / r as f64, (grid.nx + 2) * r);
    let u = ScalarField::from_fn(grid, |_, i, _| profile.u[i * r].into());
    let u_z = ScalarField::from_fn(grid, |_, i, _| (0.5 * profile.du[i * r]).into());
    let mut sol = SinhGordonSolution {
        u,
        u_z: u_z.clone(),
        u_zbar: u_z,
        residual_max: 0.0,
        orbit: Some(Orbit { u0, du0, energy: energy(u0, du0), period, profile }),
    };
    sol.residual_max = residual(&sol)?.max_abs();
    Ok(sol)
}

/// Wrap an arbitrary real field; derivatives come from the grid stencils.
pub fn from_field(u: ScalarField) -> Result<SinhGordonSolution, SinhGordonError> {
    let u_z = u.dz()?;
    let u_zbar = u.dzbar()?;
    let mut sol = SinhGordonSolution { u, u_z, u_zbar, residual_max: 0.0, orbit: None };
    sol.residual_max = residual(&sol)?.max_abs();
    Ok(sol)
}

/// `∂∂̄u + ½ sinh 2u` by stencils.
pub fn residual(sol: &SinhGordonSolution) -> Result<ScalarField, AlgebraError> {
    let lap = sol.u.dz_dzbar()?;
    Ok(lap.zip(&sol.u, |l, u| l + 0.5 * (2.0 * u).sinh()))
}

/// Maximum relative energy drift along the fine profile of a 1D solution.
pub fn energy_drift(orbit: &Orbit) -> f64 {
    let e0 = orbit.energy;
    orbit.profile.u.iter().zip(&orbit.profile.du).map(|(u, du)| ((energy(*u, *du) - e0) / e0).abs()).fold(0.0, f64::max)
}

/// Torus average `⟨f⟩`: the sample mean over one period cell.
pub fn torus_average(f: &ScalarField) -> Complex64 {
    f.mean()
}

/// `(u, u')` of a 1D profile at fractional grid index `x`, `None` outside
/// the sampled range.
pub fn profile_at(profile: &Profile, x: f64) -> Option<(f64, f64)> {
    let k = x * PROFILE_REFINEMENT as f64;
    if k < 0.0 {
        return None;
    }
    let m = k.floor();
    let t = k - m;
    let m = m as usize;
    if t < 1e-9 && m < profile.u.len() {
        return Some((profile.u[m], profile.du[m]));
    }
    if m + 1 >= profile.u.len() {
        return None;
    }
    let h = profile.step;
    let acc = |u: f64| -2.0 * (2.0 * u).sinh();
    let (p0, v0, a0) = (profile.u[m], profile.du[m] * h, acc(profile.u[m]) * h * h);
    let (p1, v1, a1) = (profile.u[m + 1], profile.du[m + 1] * h, acc(profile.u[m + 1]) * h * h);
    // Quintic Hermite basis on [0, 1] and its derivative.
    let (t2, t3, t4, t5) = (t * t, t * t * t, t.powi(4), t.powi(5));
    let h00 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h10 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h20 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h01 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h11 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h21 = 0.5 * (t3 - 2.0 * t4 + t5);
    let d00 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4;
    let d10 = 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4;
    let d20 = 0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4);
    let d01 = -d00;
    let d11 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4;
    let d21 = 0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4);
    let u = h00 * p0 + h10 * v0 + h20 * a0 + h01 * p1 + h11 * v1 + h21 * a1;
    let du = (d00 * p0 + d10 * v0 + d20 * a0 + d01 * p1 + d11 * v1 + d21 * a1) / h;
    Some((u, du))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn vacuum_is_exact() {
        let g = Grid::periodic(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        let sol = vacuum(g);
        assert_eq!(sol.residual_max, 0.0);
        assert_eq!(residual(&sol).unwrap().max_abs(), 0.0);
        let c = sol.u.map(|u| (2.0 * u).cosh());
        assert!(c.values.iter().all(|v| *v == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn rest_point_has_no_period() {
        assert!(period_of(0.0, 0.0).is_none());
        let g = Grid::periodic(16, 16, 1.0, 1.0).unwrap();
        let sol = one_dimensional(g, 0.0, 0.0).unwrap();
        assert!(sol.u.max_abs() == 0.0);
    }

    #[test]
    fn small_oscillations_have_linearized_period() {
        // u'' ≈ −4u near the rest point.
        let t = period_of(1e-4, 0.0).unwrap();
        assert!((t - PI).abs() < 1e-6, "{t}");
    }

    #[test]
    fn period_is_independent_of_phase() {
        let t0 = period_of(0.5, 0.0).unwrap();
        let p = pendulum_orbit(0.5, 0.0, 1e-4, 3000);
        let t1 = period_of(p.u[3000], p.du[3000]).unwrap();
        assert!((t0 - t1).abs() < 1e-10);
    }

    #[test]
    fn mismatched_extent_reports_true_period() {
        let g = Grid::periodic(16, 16, 2.0, 2.0).unwrap();
        match one_dimensional(g, 0.5, 0.0) {
            Err(SinhGordonError::NotPeriodicOnGrid { period, extent }) => {
                assert!((period - period_of(0.5, 0.0).unwrap()).abs() < 1e-14);
                assert_eq!(extent, 2.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn residual_and_energy_on_periodic_orbit() {
        let t = period_of(0.5, 0.0).unwrap();
        let coarse = one_dimensional(Grid::periodic(32, 8, t, 1.0).unwrap(), 0.5, 0.0).unwrap();
        let fine = one_dimensional(Grid::periodic(64, 8, t, 1.0).unwrap(), 0.5, 0.0).unwrap();
        assert!(coarse.residual_max / fine.residual_max >= 12.0);
        assert!(energy_drift(fine.orbit.as_ref().unwrap()) <= 1e-10);
        assert!(residual(&fine).unwrap().max_imag() <= 1e-13);
    }

    #[test]
    fn non_solution_has_large_residual() {
        let g = Grid::periodic(64, 8, 2.0 * PI, 1.0).unwrap();
        let u = ScalarField::from_fn(g, |z, _, _| (0.1 * z.re.sin()).into());
        let sol = from_field(u).unwrap();
        assert!(sol.residual_max >= 1e-2);
    }

    #[test]
    fn hermite_profile_matches_half_steps() {
        let h = 0.01;
        let prof = pendulum_orbit(0.5, 0.0, h, 100);
        for m in [3usize, 41, 77] {
            let x = (m as f64 + 0.5) / PROFILE_REFINEMENT as f64;
            let (u, du) = profile_at(&prof, x).unwrap();
            let half = rk4([prof.u[m], prof.du[m]], 0.5 * h);
            assert!((u - half[0]).abs() < 1e-11);
            assert!((du - half[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn averages_of_derivatives_vanish() {
        let g = Grid::periodic(32, 32, 3.0, 2.0).unwrap();
        let f = ScalarField::from_fn(g, |z, _, _| {
            let w = Complex64::new(2.0 * PI * z.re / 3.0, 2.0 * PI * z.im / 2.0);
            (w.re.sin() * w.im.cos()).into()
        });
        assert!(torus_average(&f.dz().unwrap()).norm() <= 1e-12);
    }
}
