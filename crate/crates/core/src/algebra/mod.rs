//! Shared numeric layer: 2×2 matrices, matrix loops, grids, sampled fields,
//! the square-root branch of the spectral parameter and series fitting.

mod fit;
mod grid;
mod loops;
mod mat2;

use num_complex::Complex64;
use thiserror::Error;

pub use fit::{fit_series, fit_series_many, SeriesFit, MAX_CONDITION};
pub use grid::{cumulative_integral, interp_line, Field, FieldValue, Grid, MatField, ScalarField};
pub use loops::{shift_factor, twice_shift, LoopMatrix};
pub use mat2::{order_pair, Mat2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("grid {nx}×{ny} is too small for the stencils")]
    GridTooSmall { nx: usize, ny: usize },
    #[error("grid spacings must be positive and finite (hx = {hx}, hy = {hy})")]
    BadSpacing { hx: f64, hy: f64 },
    #[error("the spectral parameter must be nonzero")]
    LambdaZero,
    #[error("λ = {0} lies on the branch cut (−∞, 0]")]
    OnBranchCut(Complex64),
    #[error("least-squares design matrix is ill-conditioned (cond = {condition:e})")]
    FitIllConditioned { condition: f64 },
}

/// Principal square root of the spectral parameter, cut along `(−∞, 0]`.
pub fn sqrt_lambda(lambda: Complex64) -> Result<Complex64, AlgebraError> {
    if lambda.im == 0.0 && lambda.re <= 0.0 {
        return Err(AlgebraError::OnBranchCut(lambda));
    }
    Ok(lambda.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn principal_branch() {
        let r = sqrt_lambda(Complex64::new(4.0, 0.0)).unwrap();
        assert!((r - Complex64::new(2.0, 0.0)).norm() < 1e-15);
        let r = sqrt_lambda(Complex64::new(0.0, 1.0)).unwrap();
        assert!((r - Complex64::from_polar(1.0, FRAC_PI_4)).norm() < 1e-15);
        assert!(matches!(sqrt_lambda(Complex64::new(-1.0, 0.0)), Err(AlgebraError::OnBranchCut(_))));
        assert!(matches!(sqrt_lambda(Complex64::new(0.0, 0.0)), Err(AlgebraError::OnBranchCut(_))));
    }
}
