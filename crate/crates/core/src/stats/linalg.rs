use nalgebra::{DMatrix, DVector};

/// Solve A x = b for symmetric positive-definite A. `None` when the Cholesky
/// factorization fails or a pivot is negligible relative to its diagonal.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    for j in 0..a.nrows() {
        if l[(j, j)] * l[(j, j)] <= 1e-13 * a[(j, j)].abs().max(f64::MIN_POSITIVE) {
            return None;
        }
    }
    Some(chol.solve(b))
}
