//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factorization that reports a diagonal diagnostic on failure.
pub fn cholesky(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() {
        return Err(Error::shape(format!(
            "{context}: expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(singular(m, context));
    }
    Cholesky::new(m.clone()).ok_or_else(|| singular(m, context))
}

fn singular(m: &DMatrix<f64>, context: &str) -> Error {
    let diag = m.diagonal();
    let min_diag = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_diag = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Error::Singular {
        context: context.to_string(),
        min_diag,
        max_diag,
    }
}

/// `(m + mᵀ) / 2`
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    Ok(cholesky(m, context)?.inverse())
}

/// Solve `precision * x = rhs` for SPD `precision`.
pub fn spd_solve(precision: &DMatrix<f64>, rhs: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    Ok(cholesky(precision, context)?.solve(rhs))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
