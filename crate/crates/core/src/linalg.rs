//! Bridge between the `nalgebra` types used across the public API and the
//! `faer` factorizations used for the heavy dense solves.

use nalgebra::{DMatrix, DVector};

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Solves `a x = b` for symmetric positive definite `a` via Cholesky.
/// Returns `None` when the factorization fails (matrix not SPD).
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    debug_assert_eq!(a.nrows(), a.ncols());
    debug_assert_eq!(a.nrows(), b.len());
    let fa = to_faer(a);
    let llt = fa.llt(faer::Side::Lower).ok()?;
    use faer::linalg::solvers::Solve;
    let rhs = faer::Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = llt.solve(&rhs);
    Some(DVector::from_fn(b.len(), |i, _| x[(i, 0)]))
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
/// Returns `None` when the eigensolver fails to converge.
pub(crate) fn sym_eigen_desc(m: &DMatrix<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    debug_assert_eq!(m.nrows(), m.ncols());
    let n = m.nrows();
    let fm = to_faer(m);
    let eig = faer::linalg::solvers::SelfAdjointEigen::new(fm.as_ref(), faer::Side::Lower).ok()?;
    // faer sorts nondecreasing; flip to descending.
    let vals = DVector::from_fn(n, |i, _| eig.S()[n - 1 - i]);
    let vecs = DMatrix::from_fn(n, n, |i, j| eig.U()[(i, n - 1 - j)]);
    Some((vals, vecs))
}
