//! Complex 2×2 matrices.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// A complex 2×2 matrix stored row-major as `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Mat2 {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

impl Mat2 {
    pub const fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        Self { a, b, c, d }
    }

    pub fn from_real(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self::new(a.into(), b.into(), c.into(), d.into())
    }

    pub const fn zero() -> Self {
        Self::new(ZERO, ZERO, ZERO, ZERO)
    }

    /// Identity element.
    pub const fn identity() -> Self {
        Self::new(ONE, ZERO, ZERO, ONE)
    }

    pub fn diag(p: Complex64, q: Complex64) -> Self {
        Self::new(p, ZERO, ZERO, q)
    }

    pub fn scalar(s: Complex64) -> Self {
        Self::diag(s, s)
    }

    /// Unit-length element of su(2) spanning the diagonal torus:
    /// `(i/2)·diag(1, −1)`, so that `inner(ε, ε) = 1`.
    pub fn epsilon() -> Self {
        Self::diag(I * 0.5, -I * 0.5)
    }

    /// The unit quaternion `i·diag(1, −1)`; conjugating it by the two Sym
    /// frames gives the unit normal of the immersion.
    pub fn normal_direction() -> Self {
        Self::diag(I, -I)
    }

    /// Upper-triangular nilpotent `[[0, 1], [0, 0]]`, the normalized pole
    /// coefficient of a potential.
    pub fn upsilon() -> Self {
        Self::new(ZERO, ONE, ZERO, ZERO)
    }

    /// `J = [[0, 1], [−1, 0]]`, which maps solutions of the eigenfunction
    /// system to solutions of its dual.
    pub fn j() -> Self {
        Self::new(ZERO, ONE, -ONE, ZERO)
    }

    pub fn det(&self) -> Complex64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> Complex64 {
        self.a + self.d
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.a, self.c, self.b, self.d)
    }

    pub fn conj(&self) -> Self {
        Self::new(self.a.conj(), self.b.conj(), self.c.conj(), self.d.conj())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::new(self.a.conj(), self.c.conj(), self.b.conj(), self.d.conj())
    }

    /// Classical adjugate: `m · adj(m) = det(m)·1`.
    pub fn adjugate(&self) -> Self {
        Self::new(self.d, -self.b, -self.c, self.a)
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det.norm() == 0.0 || !det.is_finite() {
            return None;
        }
        Some(self.adjugate() * det.inv())
    }

    pub fn commutator(&self, other: &Self) -> Self {
        *self * *other - *other * *self
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    pub fn entries(&self) -> [Complex64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.entries().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.entries().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|z| z.is_finite())
    }

    /// `m·m* = 1` and `det m = 1` within `tol`, entrywise.
    pub fn is_su2(&self, tol: f64) -> bool {
        let gram = *self * self.adjoint() - Self::identity();
        gram.max_abs() <= tol && (self.det() - ONE).norm() <= tol
    }

    /// `m* = −m` and `tr m = 0` within `tol`.
    pub fn is_su2_algebra(&self, tol: f64) -> bool {
        (self.adjoint() + *self).max_abs() <= tol && self.trace().norm() <= tol
    }

    /// The invariant form `⟨a, b⟩ = −2 tr(ab)` on su(2), extended bilinearly.
    pub fn inner(&self, other: &Self) -> Complex64 {
        -2.0 * (*self * *other).trace()
    }

    /// Complex-bilinear extension of the Euclidean inner product of ℝ⁴ ≅ ℍ,
    /// realised as `½ tr(adj(a)·b)`; unit quaternions have length one.
    pub fn ambient_inner(&self, other: &Self) -> Complex64 {
        0.5 * (self.adjugate() * *other).trace()
    }

    /// Matrix exponential, exact for 2×2 via Cayley–Hamilton.
    pub fn exp(&self) -> Self {
        let half_tr = self.trace() * 0.5;
        let m = *self - Self::scalar(half_tr);
        // m is traceless, m² = −det(m)·1.
        let q = (-m.det()).sqrt();
        let (c, s_over_q) = if q.norm() < 1e-8 {
            let q2 = q * q;
            (ONE + q2 / 2.0 + q2 * q2 / 24.0, ONE + q2 / 6.0 + q2 * q2 / 120.0)
        } else {
            (q.cosh(), q.sinh() / q)
        };
        (Self::scalar(c) + m.scale(s_over_q)).scale(half_tr.exp())
    }

    /// Eigenvalues `(μ, μ')` ordered by the monodromy labelling rule:
    /// `|μ| ≥ |μ'|`, and on a modulus tie the one with argument in `[0, π)`.
    pub fn eigenvalues(&self) -> (Complex64, Complex64) {
        let half_tr = self.trace() * 0.5;
        let disc = (half_tr * half_tr - self.det()).sqrt();
        let (mut p, mut q) = (half_tr + disc, half_tr - disc);
        // Recompute the smaller root from the product to avoid cancellation.
        if p.norm() < q.norm() {
            std::mem::swap(&mut p, &mut q);
        }
        if p.norm() > 0.0 {
            q = self.det() / p;
        }
        order_pair(p, q)
    }

    /// A right eigenvector for eigenvalue `mu`, chosen from the better
    /// conditioned column of `m − μ`.
    pub fn eigenvector(&self, mu: Complex64) -> [Complex64; 2] {
        // (m − μ)v = 0: candidates (b, μ − a) and (μ − d, c).
        let v1 = [self.b, mu - self.a];
        let v2 = [mu - self.d, self.c];
        let n1 = v1[0].norm_sqr() + v1[1].norm_sqr();
        let n2 = v2[0].norm_sqr() + v2[1].norm_sqr();
        if n1 >= n2 {
            v1
        } else {
            v2
        }
    }

    pub fn apply(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }

    /// Row vector times matrix: `vᵗ·m`.
    pub fn apply_left(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        [v[0] * self.a + v[1] * self.c, v[0] * self.b + v[1] * self.d]
    }

    /// Outer product `v·wᵗ`.
    pub fn outer(v: [Complex64; 2], w: [Complex64; 2]) -> Self {
        Self::new(v[0] * w[0], v[0] * w[1], v[1] * w[0], v[1] * w[1])
    }

    /// Nearest element of SU(2) in the quaternion sense; returns the
    /// projection and the Frobenius size of the correction.
    pub fn project_su2(&self) -> (Self, f64) {
        let p = (self.a + self.d.conj()) * 0.5;
        let q = (self.b - self.c.conj()) * 0.5;
        let n = (p.norm_sqr() + q.norm_sqr()).sqrt();
        let (p, q) = (p / n, q / n);
        let out = Self::new(p, q, -q.conj(), p.conj());
        let corr = (out - *self).norm();
        (out, corr)
    }

    /// Rescale to determinant one; returns the scaled matrix and the size of
    /// the correction.
    pub fn unimodular(&self) -> (Self, f64) {
        let s = self.det().sqrt();
        let out = self.scale(s.inv());
        let corr = (out - *self).norm();
        (out, corr)
    }
}

/// Order a reciprocal eigenvalue pair by `|μ| ≥ 1`, ties by argument in `[0, π)`.
pub fn order_pair(p: Complex64, q: Complex64) -> (Complex64, Complex64) {
    let (np, nq) = (p.norm(), q.norm());
    let tie = (np - nq).abs() <= 1e-12 * np.max(nq).max(1e-300);
    if tie {
        let arg = p.arg();
        if (0.0..std::f64::consts::PI).contains(&arg) {
            (p, q)
        } else {
            (q, p)
        }
    } else if np > nq {
        (p, q)
    } else {
        (q, p)
    }
}

impl Add for Mat2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl AddAssign for Mat2 {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for Mat2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}

impl SubAssign for Mat2 {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl Neg for Mat2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.a, -self.b, -self.c, -self.d)
    }
}

impl Mul for Mat2 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

impl Mul<Complex64> for Mat2 {
    type Output = Self;
    fn mul(self, s: Complex64) -> Self {
        self.scale(s)
    }
}

impl Mul<f64> for Mat2 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }
}
