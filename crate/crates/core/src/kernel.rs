//! Kernel evaluation, Gram-matrix construction, kernel-width selection, and
//! the symmetric eigendecomposition contract shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Rbf,
    Linear,
}

/// A kernel function: family tag plus the inverse squared-length-scale
/// `gamma` for the RBF family (unused for the linear kernel).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelModel {
    family: KernelFamily,
    gamma: f64,
}

impl KernelModel {
    /// RBF kernel `k(x, y) = exp(-gamma * ||x - y||^2)`, `gamma > 0`.
    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "RBF width must be a positive finite number, got {gamma}"
            )));
        }
        Ok(Self { family: KernelFamily::Rbf, gamma })
    }

    /// Linear kernel `k(x, y) = x . y`.
    pub fn linear() -> Self {
        Self { family: KernelFamily::Linear, gamma: 0.0 }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// Inverse width; only meaningful for the RBF family.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Evaluates the kernel on two points of equal dimension.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self.family {
            KernelFamily::Rbf => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * sq).exp()
            }
            KernelFamily::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }
}

/// Column-major collection of `n` points in input space: a `d x n` matrix
/// whose column `j` is the point `s_j`. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "data matrix must be at least 1x1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("data matrix contains non-finite entries".into()));
        }
        Ok(Self { values })
    }

    /// Input dimension `d`.
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Sample count `n`.
    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false // by construction n >= 1
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.values.as_slice()[j * d..(j + 1) * d]
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// nonincreasing order; column `i` of `eigenvectors` pairs with
/// `eigenvalues[i]`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

/// Criterion for picking the RBF inverse width from data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WidthCriterion {
    /// Kernel entry at the maximum pairwise distance equals `exp(-9/2)`,
    /// i.e. `gamma = 4.5 / d_max^2`.
    DMax,
    /// Kernel entry at the median pairwise distance equals `0.5`,
    /// i.e. `gamma = ln 2 / d_med^2`.
    DMed,
}

/// Builds the `n x n` Gram matrix `K[i, j] = k(s_i, s_j)`.
///
/// The result is exactly symmetric; for the linear family the product
/// `S^T S` is symmetrized as `(K + K^T) / 2` after construction.
pub fn kernel_matrix(data: &DataMatrix, kernel: &KernelModel) -> DMatrix<f64> {
    let n = data.len();
    let mut k = DMatrix::zeros(n, n);
    match kernel.family() {
        KernelFamily::Rbf => {
            for i in 0..n {
                k[(i, i)] = 1.0;
                for j in (i + 1)..n {
                    let v = kernel.eval(data.column(i), data.column(j));
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
        }
        KernelFamily::Linear => {
            let s = data.matrix();
            let prod = s.transpose() * s;
            k = (&prod + prod.transpose()) * 0.5;
        }
    }
    k
}

/// All pairwise Euclidean distances between the columns of `data`, computed
/// pairwise-exactly (no norm expansion shortcut).
pub fn pairwise_distances(data: &DataMatrix) -> Vec<f64> {
    let n = data.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let ci = data.column(i);
        for j in (i + 1)..n {
            let cj = data.column(j);
            let sq: f64 = ci.iter().zip(cj).map(|(a, b)| (a - b) * (a - b)).sum();
            out.push(sq.sqrt());
        }
    }
    out
}

/// Selects the RBF inverse width `gamma` from the data.
///
/// `DMax` puts the entry at the maximum pairwise distance at `exp(-9/2)`;
/// `DMed` puts the entry at the median pairwise distance at `0.5`. The
/// median is the element at index `m / 2` of the ascending sorted list of
/// the `m = n (n - 1) / 2` pairwise distances, so it is always a realized
/// distance.
pub fn select_width(data: &DataMatrix, criterion: WidthCriterion) -> Result<f64> {
    if data.len() < 2 {
        return Err(Error::InvalidInput("width selection needs at least two points".into()));
    }
    let mut dists = pairwise_distances(data);
    let d = match criterion {
        WidthCriterion::DMax => dists.iter().copied().fold(0.0_f64, f64::max),
        WidthCriterion::DMed => {
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            dists[dists.len() / 2]
        }
    };
    if d == 0.0 {
        return Err(Error::DegenerateData(
            "all pairwise distances are zero; cannot select a kernel width".into(),
        ));
    }
    Ok(match criterion {
        WidthCriterion::DMax => 4.5 / (d * d),
        WidthCriterion::DMed => std::f64::consts::LN_2 / (d * d),
    })
}

/// Symmetric eigendecomposition `K = U diag(lambda) U^T` with eigenvalues
/// sorted in nonincreasing order.
///
/// Requires `K` symmetric within `1e-10`; fails with a numerical error when
/// the underlying eigensolver does not converge.
pub fn sym_eig(k: &DMatrix<f64>) -> Result<EigenDecomposition> {
    if k.nrows() != k.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix contains non-finite entries".into()));
    }
    let max_abs = k.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let asym = (k - k.transpose()).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if asym > 1e-10 * max_abs.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric: max asymmetry {asym:.3e}"
        )));
    }
    let (eigenvalues, eigenvectors) = linalg::sym_eigen_desc(k)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigendecomposition did not converge".into()))?;
    Ok(EigenDecomposition { eigenvalues, eigenvectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn data(rows: usize, cols: usize, vals: &[f64]) -> DataMatrix {
        DataMatrix::new(DMatrix::from_column_slice(rows, cols, vals)).unwrap()
    }

    #[test]
    fn single_column_rbf_is_one() {
        let s = data(3, 1, &[1.0, -2.0, 0.5]);
        let k = kernel_matrix(&s, &KernelModel::rbf(0.3).unwrap());
        assert_eq!(k.nrows(), 1);
        assert_eq!(k[(0, 0)], 1.0);
    }

    #[test]
    fn duplicate_points_give_all_ones() {
        let s = data(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        let k = kernel_matrix(&s, &KernelModel::rbf(1.7).unwrap());
        for v in k.iter() {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn rbf_entry_matches_direct_formula() {
        // two 1-D points {0, 1} at the oil-flow width
        let s = data(1, 2, &[0.0, 1.0]);
        let k = kernel_matrix(&s, &KernelModel::rbf(0.075).unwrap());
        assert_relative_eq!(k[(0, 1)], 0.9277434863285529, epsilon = 1e-12);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
    }

    #[test]
    fn linear_kernel_is_gram_matrix() {
        let s = data(2, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let k = kernel_matrix(&s, &KernelModel::linear());
        let expect = s.matrix().transpose() * s.matrix();
        assert_relative_eq!(k, expect, epsilon = 1e-14);
    }

    #[test]
    fn non_finite_data_is_rejected() {
        let m = DMatrix::from_column_slice(1, 2, &[1.0, f64::NAN]);
        assert!(matches!(DataMatrix::new(m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn width_dmax_from_known_distance() {
        // max pairwise distance 3.0 -> gamma = 4.5 / 9 = 0.5
        let s = data(1, 2, &[0.0, 3.0]);
        assert_relative_eq!(select_width(&s, WidthCriterion::DMax).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn width_dmed_from_known_distance() {
        // median pairwise distance 1.0 -> gamma = ln 2
        let s = data(1, 2, &[0.0, 1.0]);
        assert_relative_eq!(
            select_width(&s, WidthCriterion::DMed).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn width_identity_holds_on_synthetic_cloud() {
        // 100 deterministic points; recompute distances independently and
        // check the defining identity exp(-gamma d_med^2) = 0.5.
        let n = 100;
        let d = 3;
        let mut vals = Vec::with_capacity(n * d);
        let mut state = 0x9e3779b97f4a7c15_u64;
        for _ in 0..(n * d) {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            vals.push((state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0);
        }
        let s = data(d, n, &vals);
        let gamma = select_width(&s, WidthCriterion::DMed).unwrap();

        // independent recomputation
        let mut dists = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let a = s.column(i);
                let b = s.column(j);
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                dists.push(sq.sqrt());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = dists[dists.len() / 2];
        assert!((-gamma * med * med).exp() - 0.5 < 1e-12);
        assert!(((-gamma * med * med).exp() - 0.5).abs() < 1e-12);

        // and the dmax identity on the same cloud
        let gmax = select_width(&s, WidthCriterion::DMax).unwrap();
        let dmax = dists.last().copied().unwrap();
        assert!(((-gmax * dmax * dmax).exp() - (-4.5_f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn width_rejects_coincident_points() {
        let s = data(2, 3, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(select_width(&s, WidthCriterion::DMed), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn eig_identity() {
        let eig = sym_eig(&DMatrix::identity(3, 3)).unwrap();
        for i in 0..3 {
            assert_relative_eq!(eig.eigenvalues[i], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn eig_diagonal_sorted_with_permutation_vectors() {
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let eig = sym_eig(&k).unwrap();
        assert_relative_eq!(eig.eigenvalues[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(eig.eigenvalues[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(eig.eigenvalues[2], 1.0, epsilon = 1e-12);
        // columns are (signed) permutation vectors
        for j in 0..3 {
            let col = eig.eigenvectors.column(j);
            let big: Vec<_> = col.iter().filter(|v| v.abs() > 0.5).collect();
            assert_eq!(big.len(), 1);
            assert_relative_eq!(big[0].abs(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn eig_reconstructs_random_symmetric() {
        let n = 20;
        let mut state = 12345_u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a = DMatrix::from_fn(n, n, |_, _| next());
        let k = (&a + a.transpose()) * 0.5;
        let eig = sym_eig(&k).unwrap();
        let rec = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues)
            * eig.eigenvectors.transpose();
        let rel = (&rec - &k).norm() / k.norm();
        assert!(rel <= 1e-8, "reconstruction residual {rel:.3e}");
        // orthogonality of the basis
        let ortho = eig.eigenvectors.transpose() * &eig.eigenvectors - DMatrix::identity(n, n);
        assert!(ortho.iter().fold(0.0_f64, |m, v| m.max(v.abs())) <= 1e-8);
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(sym_eig(&k), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn linear_eigenvalues_are_squared_singular_values() {
        let s = data(3, 5, &[
            0.3, -1.2, 0.7, 0.1, 0.9, -0.4, 1.1, 0.2, -0.6, 0.5, 0.8, -0.3, 0.2, 0.4, -1.0,
        ]);
        let k = kernel_matrix(&s, &KernelModel::linear());
        let eig = sym_eig(&k).unwrap();
        let mut sv = s.matrix().clone().svd(false, false).singular_values.as_slice().to_vec();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (i, sigma) in sv.iter().enumerate() {
            let expect = sigma * sigma;
            assert!((eig.eigenvalues[i] - expect).abs() <= 1e-8 * expect.max(1e-8));
        }
    }

    proptest! {
        #[test]
        fn rbf_gram_is_symmetric_unit_diagonal_in_unit_interval(
            vals in proptest::collection::vec(-5.0f64..5.0, 12),
            gamma in 0.01f64..5.0,
        ) {
            let s = data(3, 4, &vals);
            let k = kernel_matrix(&s, &KernelModel::rbf(gamma).unwrap());
            for i in 0..4 {
                prop_assert_eq!(k[(i, i)], 1.0);
                for j in 0..4 {
                    prop_assert_eq!(k[(i, j)], k[(j, i)]);
                    prop_assert!(k[(i, j)] > 0.0 && k[(i, j)] <= 1.0);
                }
            }
        }
    }
}
