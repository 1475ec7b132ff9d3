//! Laurent polynomials in the spectral parameter with 2×2 matrix coefficients.

use num_complex::Complex64;

use super::{AlgebraError, Mat2};

/// `ξ(λ) = Σ_{j = j_min}^{j_min + n − 1} c_j λ^j`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopMatrix {
    pub j_min: i32,
    pub coeffs: Vec<Mat2>,
}

impl LoopMatrix {
    pub fn new(j_min: i32, coeffs: Vec<Mat2>) -> Self {
        Self { j_min, coeffs }
    }

    pub fn zero(j_min: i32, len: usize) -> Self {
        Self::new(j_min, vec![Mat2::zero(); len])
    }

    pub fn j_max(&self) -> i32 {
        self.j_min + self.coeffs.len() as i32 - 1
    }

    /// Coefficient of `λ^j`, zero outside the stored range.
    pub fn coeff(&self, j: i32) -> Mat2 {
        let k = j - self.j_min;
        if k < 0 || k as usize >= self.coeffs.len() {
            Mat2::zero()
        } else {
            self.coeffs[k as usize]
        }
    }

    /// Horner evaluation.
    pub fn eval(&self, lambda: Complex64) -> Result<Mat2, AlgebraError> {
        if lambda.norm() == 0.0 {
            return Err(AlgebraError::LambdaZero);
        }
        let mut acc = Mat2::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * lambda + *c;
        }
        Ok(acc * lambda.powi(self.j_min))
    }

    /// Term-by-term power sum, kept as an independent cross-check of [`eval`].
    ///
    /// [`eval`]: Self::eval
    pub fn eval_naive(&self, lambda: Complex64) -> Result<Mat2, AlgebraError> {
        if lambda.norm() == 0.0 {
            return Err(AlgebraError::LambdaZero);
        }
        Ok(self
            .coeffs
            .iter()
            .enumerate()
            .fold(Mat2::zero(), |acc, (k, c)| acc + *c * lambda.powi(self.j_min + k as i32)))
    }

    /// Reality predicate `λ^{g−1}·conj(ξ(1/λ̄))ᵗ = −ξ(λ)`, coefficientwise
    /// `c_j = −c_{g−1−j}*`.
    pub fn satisfies_reality(&self, genus: u32, tol: f64) -> bool {
        self.reality_defect(genus) <= tol
    }

    /// Largest entry of `c_j + c_{g−1−j}*` over all `j`.
    pub fn reality_defect(&self, genus: u32) -> f64 {
        let shift = genus as i32 - 1;
        let lo = self.j_min.min(shift - self.j_max());
        let hi = self.j_max().max(shift - self.j_min);
        (lo..=hi).map(|j| (self.coeff(j) + self.coeff(shift - j).adjoint()).max_abs()).fold(0.0, f64::max)
    }

    /// `ρ(ξ)(λ) = −λ^{g−1}·conj(ξ(1/λ̄))ᵗ`, coefficientwise `−c_{g−1−j}*`;
    /// the reality predicate says `ρ(ξ) = ξ`.
    pub fn reality_image(&self, genus: u32) -> Self {
        let shift = genus as i32 - 1;
        let j_min = shift - self.j_max();
        let coeffs = (0..self.coeffs.len()).map(|k| -self.coeff(shift - j_min - k as i32).adjoint()).collect();
        Self::new(j_min, coeffs)
    }

    pub fn commutator(&self, other: &Self) -> Self {
        let j_min = self.j_min + other.j_min;
        let len = self.coeffs.len() + other.coeffs.len() - 1;
        let mut out = vec![Mat2::zero(); len];
        for (p, a) in self.coeffs.iter().enumerate() {
            for (q, b) in other.coeffs.iter().enumerate() {
                out[p + q] += a.commutator(b);
            }
        }
        Self::new(j_min, out)
    }

    /// Left multiplication by `D(λ) = D0 + λ·D1`.
    pub fn mul_linear_left(&self, d0: Mat2, d1: Mat2) -> Self {
        let mut out = vec![Mat2::zero(); self.coeffs.len() + 1];
        for (k, c) in self.coeffs.iter().enumerate() {
            out[k] += d0 * *c;
            out[k + 1] += d1 * *c;
        }
        Self::new(self.j_min, out)
    }

    pub fn add(&self, other: &Self) -> Self {
        let lo = self.j_min.min(other.j_min);
        let hi = self.j_max().max(other.j_max());
        let coeffs = (lo..=hi).map(|j| self.coeff(j) + other.coeff(j)).collect();
        Self::new(lo, coeffs)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::new(self.j_min, self.coeffs.iter().map(|c| *c * s).collect())
    }

    /// Divide by `(λ − a)`; returns the quotient (same lowest exponent) and
    /// the remainder, i.e. the value `λ^{j_min}`-weighted polynomial at `a`.
    pub fn div_linear(&self, a: Complex64) -> (Self, Mat2) {
        // Work with p(λ) = λ^{−j_min}ξ(λ), an ordinary polynomial.
        let n = self.coeffs.len();
        if n == 1 {
            return (Self::zero(self.j_min, 1), self.coeffs[0]);
        }
        let mut quot = vec![Mat2::zero(); n - 1];
        let mut carry = self.coeffs[n - 1];
        for k in (0..n - 1).rev() {
            quot[k] = carry;
            carry = self.coeffs[k] + carry * a;
        }
        (Self::new(self.j_min, quot), carry)
    }

    /// `det ξ(λ)` as scalar Laurent coefficients starting at `2·j_min`.
    pub fn det_coeffs(&self) -> (i32, Vec<Complex64>) {
        let n = self.coeffs.len();
        let mut out = vec![Complex64::new(0.0, 0.0); 2 * n - 1];
        for (p, x) in self.coeffs.iter().enumerate() {
            for (q, y) in self.coeffs.iter().enumerate() {
                // det is quadratic: det(X+Y) polarisation via a·d − b·c.
                out[p + q] += x.a * y.d - x.b * y.c;
            }
        }
        (2 * self.j_min, out)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(Mat2::max_abs).fold(0.0, f64::max)
    }
}

/// `l` for genus `g`, as a multiple of ½: returns `2l = g − 1`.
///
/// With the reality condition written as `λ^{g−1}·conj(ξ(1/λ̄))ᵗ = −ξ(λ)`, the
/// shift `λ^{−l}ξ` is skew-hermitian on the unit circle exactly when
/// `2l = g − 1`, so this value is used for every genus.
pub fn twice_shift(genus: u32) -> i32 {
    genus as i32 - 1
}

/// `λ^{−l}` on the principal sheet.
pub fn shift_factor(genus: u32, lambda: Complex64) -> Result<Complex64, AlgebraError> {
    let two_l = twice_shift(genus);
    if two_l % 2 == 0 {
        Ok(lambda.powi(-two_l / 2))
    } else {
        let root = super::sqrt_lambda(lambda)?;
        Ok(root.powi(-two_l))
    }
}
