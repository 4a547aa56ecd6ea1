//! Small dense helpers over nalgebra.

use nalgebra::{DMatrix, DVector};

/// Solves `a·x = b` for symmetric positive definite `a`.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

/// Inverse of a symmetric positive (semi)definite matrix. Falls back to a
/// `ridge·I` shift when the Cholesky factorisation fails; the flag reports
/// whether the ridge was needed.
pub(crate) fn inverse_spd(a: &DMatrix<f64>, ridge: f64) -> Option<(DMatrix<f64>, bool)> {
    if let Some(c) = a.clone().cholesky() {
        return Some((c.inverse(), false));
    }
    let n = a.nrows();
    let shifted = a + DMatrix::<f64>::identity(n, n) * ridge;
    shifted.cholesky().map(|c| (c.inverse(), true))
}
