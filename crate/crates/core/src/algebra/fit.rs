//! Least-squares fitting of truncated power series in a local parameter.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::AlgebraError;

/// Largest accepted condition number of the (column-equilibrated) design matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Fit `value(s) ≈ Σ_k c_k s^{p_k}` over the samples in the least-squares
/// sense. Columns are equilibrated before solving; the condition number
/// reported and checked is that of the equilibrated matrix.
#[derive(Clone, Debug)]
pub struct SeriesFit {
    pub powers: Vec<i32>,
    pub coeffs: Vec<Complex64>,
    pub condition: f64,
    pub residual: f64,
}

impl SeriesFit {
    pub fn coeff(&self, power: i32) -> Option<Complex64> {
        self.powers.iter().position(|&p| p == power).map(|k| self.coeffs[k])
    }
}

pub fn fit_series(params: &[Complex64], values: &[Complex64], powers: &[i32]) -> Result<SeriesFit, AlgebraError> {
    let design = design_matrix(params, powers);
    let (solver, scale, condition) = prepare(design)?;
    let rhs = DVector::from_column_slice(values);
    Ok(solve_one(&solver, &scale, condition, &rhs, powers))
}

/// Fit many value vectors sharing the same sample parameters (one per grid
/// point, say) with a single factorisation.
pub fn fit_series_many(
    params: &[Complex64],
    values: &[Vec<Complex64>],
    powers: &[i32],
) -> Result<Vec<SeriesFit>, AlgebraError> {
    let design = design_matrix(params, powers);
    let (solver, scale, condition) = prepare(design)?;
    Ok(values.iter().map(|v| solve_one(&solver, &scale, condition, &DVector::from_column_slice(v), powers)).collect())
}

struct Solver {
    svd: nalgebra::SVD<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    design: DMatrix<Complex64>,
}

fn design_matrix(params: &[Complex64], powers: &[i32]) -> DMatrix<Complex64> {
    DMatrix::from_fn(params.len(), powers.len(), |r, c| params[r].powi(powers[c]))
}

fn prepare(mut design: DMatrix<Complex64>) -> Result<(Solver, Vec<f64>, f64), AlgebraError> {
    if design.nrows() < design.ncols() {
        return Err(AlgebraError::FitIllConditioned { condition: f64::INFINITY });
    }
    let mut scale = Vec::with_capacity(design.ncols());
    for mut col in design.column_iter_mut() {
        let n = col.norm();
        let n = if n > 0.0 { n } else { 1.0 };
        col /= Complex64::new(n, 0.0);
        scale.push(n);
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    // NaN fails the comparison and is rejected too.
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(AlgebraError::FitIllConditioned { condition });
    }
    Ok((Solver { svd, design }, scale, condition))
}

fn solve_one(solver: &Solver, scale: &[f64], condition: f64, rhs: &DVector<Complex64>, powers: &[i32]) -> SeriesFit {
    let x = solver.svd.solve(rhs, 0.0).expect("SVD computed with both factors");
    let residual = (&solver.design * &x - rhs).norm();
    let coeffs = x.iter().zip(scale).map(|(v, s)| v / *s).collect();
    SeriesFit { powers: powers.to_vec(), coeffs, condition, residual }
}
