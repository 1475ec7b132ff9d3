//! Rectangular z-grids and sampled fields with 4th-order Wirtinger stencils.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use rayon::prelude::*;

use super::{AlgebraError, Mat2};

/// Rectangular sample lattice `z = z₀ + i·hx + j·hy·i` with optional periods
/// `γ₁ = nx·hx` and `γ₂ = i·ny·hy`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub origin: Complex64,
    pub periodic: [bool; 2],
}

impl Grid {
    pub const MIN_POINTS: usize = 8;

    pub fn new(
        nx: usize,
        ny: usize,
        hx: f64,
        hy: f64,
        origin: Complex64,
        periodic: [bool; 2],
    ) -> Result<Self, AlgebraError> {
        if nx < Self::MIN_POINTS || ny < Self::MIN_POINTS {
            return Err(AlgebraError::GridTooSmall { nx, ny });
        }
        if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
            return Err(AlgebraError::BadSpacing { hx, hy });
        }
        Ok(Self { nx, ny, hx, hy, origin, periodic })
    }

    /// Doubly periodic grid covering `[0, lx) × [0, ly)` from the origin.
    pub fn periodic(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self, AlgebraError> {
        Self::new(nx, ny, lx / nx as f64, ly / ny as f64, Complex64::new(0.0, 0.0), [true, true])
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn z(&self, i: usize, j: usize) -> Complex64 {
        self.origin + Complex64::new(i as f64 * self.hx, j as f64 * self.hy)
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.nx as f64 * self.hx, self.ny as f64 * self.hy)
    }

    /// Lattice periods for the periodic axes.
    pub fn periods(&self) -> [Option<Complex64>; 2] {
        let (lx, ly) = self.extent();
        [self.periodic[0].then(|| Complex64::new(lx, 0.0)), self.periodic[1].then(|| Complex64::new(0.0, ly))]
    }

    /// Same lattice with each axis refined by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Self, AlgebraError> {
        Self::new(
            self.nx * factor,
            self.ny * factor,
            self.hx / factor as f64,
            self.hy / factor as f64,
            self.origin,
            self.periodic,
        )
    }
}

/// Values that can be differentiated and interpolated on a grid.
pub trait FieldValue:
    Copy
    + Default
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<f64, Output = Self>
    + Mul<Complex64, Output = Self>
{
    fn magnitude(&self) -> f64;
}

impl FieldValue for Complex64 {
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl FieldValue for Mat2 {
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// Samples of a value on every grid point. Fields carry their own
/// periodicity flags: a field on a periodic grid need not be periodic itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    pub grid: Grid,
    pub values: Vec<T>,
    pub periodic: [bool; 2],
}

pub type ScalarField = Field<Complex64>;
pub type MatField = Field<Mat2>;

const FIRST_CENTRAL: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
const FIRST_EDGE0: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0];
const FIRST_EDGE1: [f64; 5] = [-3.0, -10.0, 18.0, -6.0, 1.0];
const SECOND_CENTRAL: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];
const SECOND_EDGE0: [f64; 6] = [45.0, -154.0, 214.0, -156.0, 61.0, -10.0];
const SECOND_EDGE1: [f64; 6] = [10.0, -15.0, -4.0, 14.0, -6.0, 1.0];

impl<T: FieldValue> Field<T> {
    pub fn new(grid: Grid, values: Vec<T>) -> Self {
        assert_eq!(values.len(), grid.len(), "sample count must match grid");
        Self { grid, values, periodic: grid.periodic }
    }

    pub fn constant(grid: Grid, value: T) -> Self {
        Self::new(grid, vec![value; grid.len()])
    }

    /// Build from a function of `(z, i, j)`.
    pub fn from_fn(grid: Grid, f: impl Fn(Complex64, usize, usize) -> T + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % grid.nx, k / grid.nx);
                f(grid.z(i, j), i, j)
            })
            .collect();
        Self::new(grid, values)
    }

    /// Mark the field as non-periodic on both axes (one-sided edge stencils).
    pub fn aperiodic(mut self) -> Self {
        self.periodic = [false, false];
        self
    }

    pub fn with_periodic(mut self, periodic: [bool; 2]) -> Self {
        self.periodic = [periodic[0] && self.grid.periodic[0], periodic[1] && self.grid.periodic[1]];
        self
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[self.grid.idx(i, j)]
    }

    pub fn map<U: FieldValue>(&self, f: impl Fn(T) -> U + Sync) -> Field<U> {
        Field { grid: self.grid, values: self.values.par_iter().map(|v| f(*v)).collect(), periodic: self.periodic }
    }

    /// Pointwise combination; the result is periodic only where both are.
    pub fn zip<U: FieldValue, V: FieldValue>(&self, other: &Field<U>, f: impl Fn(T, U) -> V + Sync) -> Field<V> {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        Field {
            grid: self.grid,
            values: self.values.par_iter().zip(other.values.par_iter()).map(|(a, b)| f(*a, *b)).collect(),
            periodic: [self.periodic[0] && other.periodic[0], self.periodic[1] && other.periodic[1]],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(FieldValue::magnitude).fold(0.0, f64::max)
    }

    /// Max over points at least `margin` samples away from non-periodic edges.
    pub fn max_abs_interior(&self, margin: usize) -> f64 {
        let (mx, my) = (if self.periodic[0] { 0 } else { margin }, if self.periodic[1] { 0 } else { margin });
        let g = self.grid;
        let mut m = 0.0f64;
        for j in my..g.ny.saturating_sub(my) {
            for i in mx..g.nx.saturating_sub(mx) {
                m = m.max(self.at(i, j).magnitude());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.magnitude().is_finite())
    }

    /// Mean of the samples: the torus average when the grid covers one period.
    pub fn mean(&self) -> T {
        let n = self.values.len() as f64;
        self.values.iter().fold(T::default(), |acc, v| acc + *v) * (1.0 / n)
    }

    fn axis_len(&self, axis: usize) -> (usize, f64) {
        if axis == 0 {
            (self.grid.nx, self.grid.hx)
        } else {
            (self.grid.ny, self.grid.hy)
        }
    }

    fn sample(&self, axis: usize, i: usize, j: usize, k: usize) -> T {
        if axis == 0 {
            self.at(k, j)
        } else {
            self.at(i, k)
        }
    }

    /// 4th-order derivative along one axis.
    pub fn diff(&self, axis: usize) -> Result<Self, AlgebraError> {
        let (n, h) = self.axis_len(axis);
        if n < 5 {
            return Err(AlgebraError::GridTooSmall { nx: self.grid.nx, ny: self.grid.ny });
        }
        let periodic = self.periodic[axis];
        let nx = self.grid.nx;
        let inv = 1.0 / (12.0 * h);
        let values = (0..self.grid.len())
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx % nx, idx / nx);
                let pos = if axis == 0 { i } else { j };
                let s = |k: usize| self.sample(axis, i, j, k);
                let weighted = |w: &[f64; 5], base: usize, sign: f64| {
                    w.iter().enumerate().fold(T::default(), |acc, (m, c)| {
                        acc + s(if sign > 0.0 { base + m } else { base - m }) * (c * sign)
                    })
                };
                let d = if periodic {
                    (0..5).fold(T::default(), |acc, m| {
                        let k = (pos + n + m - 2) % n;
                        acc + s(k) * FIRST_CENTRAL[m]
                    })
                } else if pos >= 2 && pos + 2 < n {
                    (0..5).fold(T::default(), |acc, m| acc + s(pos + m - 2) * FIRST_CENTRAL[m])
                } else if pos == 0 {
                    weighted(&FIRST_EDGE0, 0, 1.0)
                } else if pos == 1 {
                    weighted(&FIRST_EDGE1, 0, 1.0)
                } else if pos == n - 1 {
                    weighted(&FIRST_EDGE0, n - 1, -1.0)
                } else {
                    weighted(&FIRST_EDGE1, n - 1, -1.0)
                };
                // The central table is written as f(i−2)…f(i+2) with the
                // sign folded in: (f₋₂ − 8f₋₁ + 8f₁ − f₂)/12h.
                d * inv
            })
            .collect();
        Ok(Self { grid: self.grid, values, periodic: self.periodic })
    }

    /// 4th-order second derivative along one axis (a direct stencil, not the
    /// square of the first-derivative one).
    pub fn diff2(&self, axis: usize) -> Result<Self, AlgebraError> {
        let (n, h) = self.axis_len(axis);
        if n < 6 {
            return Err(AlgebraError::GridTooSmall { nx: self.grid.nx, ny: self.grid.ny });
        }
        let periodic = self.periodic[axis];
        let nx = self.grid.nx;
        let inv = 1.0 / (12.0 * h * h);
        let values = (0..self.grid.len())
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx % nx, idx / nx);
                let pos = if axis == 0 { i } else { j };
                let s = |k: usize| self.sample(axis, i, j, k);
                let edge = |w: &[f64; 6], from_end: bool| {
                    w.iter()
                        .enumerate()
                        .fold(T::default(), |acc, (m, c)| acc + s(if from_end { n - 1 - m } else { m }) * *c)
                };
                let d = if periodic {
                    (0..5).fold(T::default(), |acc, m| acc + s((pos + n + m - 2) % n) * SECOND_CENTRAL[m])
                } else if pos >= 2 && pos + 2 < n {
                    (0..5).fold(T::default(), |acc, m| acc + s(pos + m - 2) * SECOND_CENTRAL[m])
                } else if pos == 0 {
                    edge(&SECOND_EDGE0, false)
                } else if pos == 1 {
                    edge(&SECOND_EDGE1, false)
                } else if pos == n - 1 {
                    edge(&SECOND_EDGE0, true)
                } else {
                    edge(&SECOND_EDGE1, true)
                };
                d * inv
            })
            .collect();
        Ok(Self { grid: self.grid, values, periodic: self.periodic })
    }

    /// `∂∂̄ = ¼(∂x² + ∂y²)`.
    pub fn dz_dzbar(&self) -> Result<Self, AlgebraError> {
        let (fxx, fyy) = (self.diff2(0)?, self.diff2(1)?);
        Ok(fxx.zip(&fyy, |a, b| (a + b) * 0.25).with_periodic(self.periodic))
    }

    /// `∂² = ¼(∂x² − ∂y²) − (i/2)∂x∂y`.
    pub fn dz_dz(&self) -> Result<Self, AlgebraError> {
        let (fxx, fyy) = (self.diff2(0)?, self.diff2(1)?);
        let fxy = self.dx()?.dy()?;
        let half_i = Complex64::new(0.0, 0.5);
        Ok(fxx.zip(&fyy, |a, b| (a - b) * 0.25).zip(&fxy, |a, b| a - b * half_i).with_periodic(self.periodic))
    }

    /// `∂̄² = ¼(∂x² − ∂y²) + (i/2)∂x∂y`.
    pub fn dzbar_dzbar(&self) -> Result<Self, AlgebraError> {
        let (fxx, fyy) = (self.diff2(0)?, self.diff2(1)?);
        let fxy = self.dx()?.dy()?;
        let half_i = Complex64::new(0.0, 0.5);
        Ok(fxx.zip(&fyy, |a, b| (a - b) * 0.25).zip(&fxy, |a, b| a + b * half_i).with_periodic(self.periodic))
    }

    pub fn dx(&self) -> Result<Self, AlgebraError> {
        self.diff(0)
    }

    pub fn dy(&self) -> Result<Self, AlgebraError> {
        self.diff(1)
    }

    /// Wirtinger derivative `∂ = (∂x − i∂y)/2`.
    pub fn dz(&self) -> Result<Self, AlgebraError> {
        let (fx, fy) = (self.dx()?, self.dy()?);
        Ok(fx.zip(&fy, |a, b| (a - b * Complex64::new(0.0, 1.0)) * 0.5).with_periodic(self.periodic))
    }

    /// Wirtinger derivative `∂̄ = (∂x + i∂y)/2`.
    pub fn dzbar(&self) -> Result<Self, AlgebraError> {
        let (fx, fy) = (self.dx()?, self.dy()?);
        Ok(fx.zip(&fy, |a, b| (a + b * Complex64::new(0.0, 1.0)) * 0.5).with_periodic(self.periodic))
    }

    /// Value at a fractional position along a grid line, by 6-point Lagrange
    /// interpolation (periodic wrap or a window shifted inside the edges).
    pub fn interp_x(&self, x: f64, j: usize) -> T {
        interp_line(|k| self.at(k, j), self.grid.nx, self.periodic[0], x)
    }

    pub fn interp_y(&self, i: usize, y: f64) -> T {
        interp_line(|k| self.at(i, k), self.grid.ny, self.periodic[1], y)
    }
}

impl ScalarField {
    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }
}

/// 6-point Lagrange interpolation of a sampled line at fractional index `x`.
pub fn interp_line<T: FieldValue>(get: impl Fn(usize) -> T, n: usize, periodic: bool, x: f64) -> T {
    let base = x.floor();
    let frac = x - base;
    if frac == 0.0 {
        let k = base as isize;
        let k = if periodic { k.rem_euclid(n as isize) } else { k.clamp(0, n as isize - 1) };
        return get(k as usize);
    }
    let base = base as isize;
    let mut start = base - 2;
    if !periodic {
        start = start.clamp(0, n as isize - 6);
    }
    let t = x - start as f64;
    let mut acc = T::default();
    for m in 0..6 {
        let mut w = 1.0;
        for q in 0..6 {
            if q != m {
                w *= (t - q as f64) / (m as f64 - q as f64);
            }
        }
        let k = start + m as isize;
        let k = if periodic { k.rem_euclid(n as isize) } else { k } as usize;
        acc = acc + get(k) * w;
    }
    acc
}

/// Cumulative integral of equally spaced samples with 4th-order accuracy:
/// each cell is integrated exactly against the cubic through its neighbours.
pub fn cumulative_integral<T: FieldValue>(samples: &[T], h: f64) -> Vec<T> {
    let n = samples.len();
    let mut out = vec![T::default(); n];
    if n < 4 {
        for k in 1..n {
            out[k] = out[k - 1] + (samples[k - 1] + samples[k]) * (0.5 * h);
        }
        return out;
    }
    for k in 1..n {
        // Cell [k−1, k]; choose 4 nodes around it inside the range.
        let start = (k as isize - 2).clamp(0, n as isize - 4) as usize;
        let a = (k - 1 - start) as f64;
        let mut cell = T::default();
        for m in 0..4 {
            // ∫_a^{a+1} ℓ_m(t) dt, Lagrange basis on nodes 0..3.
            let w = lagrange_cell_weight(m, a);
            cell = cell + samples[start + m] * w;
        }
        out[k] = out[k - 1] + cell * h;
    }
    out
}

fn lagrange_cell_weight(m: usize, a: f64) -> f64 {
    // Integrate the cubic basis polynomial with 4-point Gauss–Legendre (exact).
    const GL: [(f64, f64); 4] = [
        (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
        (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    ];
    GL.iter()
        .map(|(x, w)| {
            let t = a + 0.5 * (x + 1.0);
            let mut l = 1.0;
            for q in 0..4 {
                if q != m {
                    l *= (t - q as f64) / (m as f64 - q as f64);
                }
            }
            0.5 * w * l
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn open_grid(n: usize) -> Grid {
        Grid::new(n, n, 1.0 / n as f64, 1.0 / n as f64, c(0.2, -0.1), [false, false]).unwrap()
    }

    #[test]
    fn constant_has_zero_derivative() {
        let f = ScalarField::constant(open_grid(16), c(2.0, -1.0));
        assert!(f.dz().unwrap().max_abs() < 1e-12);
        assert!(f.dzbar().unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn holomorphic_monomial() {
        let f = ScalarField::from_fn(open_grid(16), |z, _, _| z);
        let dz = f.dz().unwrap();
        let dzb = f.dzbar().unwrap();
        assert!(dz.map(|v| v - c(1.0, 0.0)).max_abs() < 1e-10);
        assert!(dzb.max_abs() < 1e-10);
    }

    #[test]
    fn conjugation_swaps_wirtinger_derivatives() {
        let g = Grid::periodic(16, 16, 2.0, 3.0).unwrap();
        let f = ScalarField::from_fn(g, |z, _, _| (z * c(0.3, 0.2)).exp() + z * z);
        let lhs = f.conj().dz().unwrap();
        let rhs = f.dzbar().unwrap().conj();
        assert!(lhs.zip(&rhs, |a, b| a - b).max_abs() < 1e-12);
    }

    #[test]
    fn second_derivative_stencils_converge_at_fourth_order() {
        let k = c(1.3, 0.4);
        let err = |n: usize| {
            let g = open_grid(n);
            let f = ScalarField::from_fn(g, |z, _, _| (z * k).exp());
            let exact = f.map(|v| v * k * k);
            let d2 = f.diff2(0).unwrap().zip(&exact, |a, b| a - b).max_abs();
            // ∂∂̄ annihilates holomorphic functions, ∂̄² too; ∂² e^{kz} = k²e^{kz}.
            let lap = f.dz_dzbar().unwrap().max_abs();
            let dzz = f.dz_dz().unwrap().zip(&exact, |a, b| a - b).max_abs();
            let dbb = f.dzbar_dzbar().unwrap().max_abs();
            [d2, lap, dzz, dbb]
        };
        let (coarse, fine) = (err(32), err(64));
        for (a, b) in coarse.iter().zip(&fine) {
            assert!(*b < 1e-5 && a / b > 12.0, "{a} {b}");
        }
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(matches!(
            Grid::new(4, 16, 0.1, 0.1, c(0.0, 0.0), [true, true]),
            Err(AlgebraError::GridTooSmall { .. })
        ));
    }

    #[test]
    fn interpolation_is_exact_for_quintics() {
        let g = open_grid(12);
        let f = ScalarField::from_fn(g, |z, _, _| {
            let x = z.re;
            c(x.powi(5) - 2.0 * x.powi(3) + 0.5, x)
        });
        let x = 3.37;
        let xv = g.origin.re + x * g.hx;
        let expect = c(xv.powi(5) - 2.0 * xv.powi(3) + 0.5, xv);
        assert!((f.interp_x(x, 0) - expect).norm() < 1e-12);
        let edge = 10.6;
        let xe = g.origin.re + edge * g.hx;
        assert!((f.interp_x(edge, 0) - c(xe.powi(5) - 2.0 * xe.powi(3) + 0.5, xe)).norm() < 1e-12);
    }

    #[test]
    fn cumulative_integral_of_cubic_is_exact() {
        let h = 0.1;
        let xs: Vec<Complex64> = (0..20)
            .map(|k| {
                let x = k as f64 * h;
                c(x * x * x - x, 0.0)
            })
            .collect();
        let integral = cumulative_integral(&xs, h);
        let x = 19.0 * h;
        let exact = x.powi(4) / 4.0 - x * x / 2.0;
        assert!((integral[19].re - exact).abs() < 1e-12);
    }
}
