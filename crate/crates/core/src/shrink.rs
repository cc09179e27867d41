//! Closed-form robust dimensionality reduction in kernel feature space.
//!
//! Given the eigendecomposition of a PSD Gram matrix, each eigenvalue is
//! shrunk independently by minimizing
//!
//! ```text
//! g(gamma) = (rho / 2) (lambda - gamma^2)^2 + tau * gamma,   gamma >= 0,
//! ```
//!
//! whose candidate minimizers are zero and the nonnegative real roots of the
//! depressed cubic `x^3 - lambda x + tau / (2 rho)`. The shrunk spectrum and
//! the eigenvector basis together form the low-rank feature-space
//! representation `C = diag(spectrum) U^T` with `C^T C` approximating the
//! input Gram matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{sym_eig, EigenDecomposition};

/// Regularization strength and penalty weight for the shrinkage problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkageParams {
    tau: f64,
    rho: f64,
}

impl ShrinkageParams {
    pub fn new(tau: f64, rho: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidInput(format!("tau must be finite and >= 0, got {tau}")));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidInput(format!("rho must be finite and > 0, got {rho}")));
        }
        Ok(Self { tau, rho })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(self.tau, rho)
    }
}

/// Relative eigenvalue floor: kernel eigenvalues in `[-PSD_TOL * lambda_max, 0)`
/// are clamped to zero; anything more negative is treated as real
/// indefiniteness and rejected.
pub const PSD_TOL: f64 = 1e-8;

/// Relative threshold on the shrunk spectrum below which a component does not
/// count towards `effective_rank`. Reporting only; does not affect solves.
pub const RANK_TOL: f64 = 1e-9;

/// Shrunk spectrum plus the eigenvector basis of the input Gram matrix.
///
/// `C = diag(spectrum) * basis^T` satisfies `||C||_* = sum(spectrum)` and
/// `C^T C = basis * diag(spectrum^2) * basis^T`.
#[derive(Debug, Clone)]
pub struct FeatureBasis {
    spectrum: DVector<f64>,
    basis: DMatrix<f64>,
    effective_rank: usize,
}

impl FeatureBasis {
    pub fn new(spectrum: DVector<f64>, basis: DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != basis.ncols() || basis.nrows() != spectrum.len() {
            return Err(Error::ShapeMismatch(format!(
                "spectrum length {} does not match basis {}x{}",
                spectrum.len(),
                basis.nrows(),
                basis.ncols()
            )));
        }
        if spectrum.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidInput("spectrum entries must be >= 0".into()));
        }
        let max = spectrum.max();
        let effective_rank = spectrum.iter().filter(|v| **v > RANK_TOL * max).count();
        Ok(Self { spectrum, basis, effective_rank })
    }

    /// Shrunk eigenvalue roots, ordered like the basis columns.
    pub fn spectrum(&self) -> &DVector<f64> {
        &self.spectrum
    }

    /// Orthogonal eigenvector basis of the input Gram matrix.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Number of spectrum entries above the rank tolerance.
    pub fn effective_rank(&self) -> usize {
        self.effective_rank
    }

    /// Trace norm of `C`, i.e. the sum of the shrunk spectrum.
    pub fn trace_norm(&self) -> f64 {
        self.spectrum.sum()
    }

    /// Assembles `C = diag(spectrum) * basis^T`.
    pub fn matrix_c(&self) -> DMatrix<f64> {
        let mut c = self.basis.transpose();
        for (i, g) in self.spectrum.iter().enumerate() {
            c.row_mut(i).scale_mut(*g);
        }
        c
    }

    /// The denoised Gram matrix `C^T C = U diag(spectrum^2) U^T`.
    pub fn ctc(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.basis.nrows(), self.basis.ncols(), |i, j| {
            self.basis[(i, j)] * self.spectrum[j]
        });
        &scaled * scaled.transpose()
    }
}

/// All real roots of the depressed cubic `x^3 + p x + q`, multiplicities
/// collapsed. Total function: any finite `(p, q)` yields at least one root.
///
/// Three-real-root instances (positive discriminant `-4 p^3 - 27 q^2`) use
/// the trigonometric method; otherwise Cardano's formula provides one root
/// and the quadratic left by deflation is checked for the near-boundary
/// double root. Every root is polished with two Newton steps.
pub fn depressed_cubic_real_roots(p: f64, q: f64) -> Vec<f64> {
    assert!(p.is_finite() && q.is_finite(), "cubic coefficients must be finite");
    if p == 0.0 && q == 0.0 {
        return vec![0.0];
    }

    let disc = -4.0 * p * p * p - 27.0 * q * q;
    let mut roots: Vec<f64> = Vec::with_capacity(3);
    if disc > 0.0 {
        // three distinct real roots; requires p < 0
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let phi = arg.acos();
        for k in 0..3 {
            roots.push(m * ((phi - 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos());
        }
    } else {
        // one real root by Cardano, avoiding cancellation
        let d = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0);
        let sd = d.max(0.0).sqrt();
        let u3 = if q >= 0.0 { -q / 2.0 - sd } else { -q / 2.0 + sd };
        let u = u3.cbrt();
        let v = if u != 0.0 { -p / (3.0 * u) } else { 0.0 };
        let r1 = u + v;
        roots.push(r1);
        // deflate: x^2 + r1 x + (p + r1^2); real solutions appear only at the
        // discriminant boundary (double root)
        let disc2 = -3.0 * r1 * r1 - 4.0 * p;
        if disc2 >= 0.0 {
            let s = disc2.sqrt();
            roots.push((-r1 + s) / 2.0);
            roots.push((-r1 - s) / 2.0);
        }
    }

    for r in roots.iter_mut() {
        for _ in 0..2 {
            let f = *r * *r * *r + p * *r + q;
            let df = 3.0 * *r * *r + p;
            if df.abs() > 1e-300 {
                let next = *r - f / df;
                let fn_next = next * next * next + p * next + q;
                if fn_next.abs() < f.abs() {
                    *r = next;
                }
            }
        }
    }

    // drop anything that is not actually a root, then collapse multiplicities
    roots.retain(|r| {
        let res = (r * r * r + p * r + q).abs();
        res <= 1e-9 * (r.abs().powi(3)).max(1.0)
    });
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1e-12));
    if roots.is_empty() {
        // the residual filter can only reject spurious deflation roots; the
        // Cardano/trig root always survives, but keep the function total
        roots.push(0.0);
    }
    roots
}

fn shrink_objective(lambda: f64, gamma: f64, params: &ShrinkageParams) -> f64 {
    let d = lambda - gamma * gamma;
    0.5 * params.rho * d * d + params.tau * gamma
}

/// Minimizes `g(gamma) = (rho/2)(lambda - gamma^2)^2 + tau gamma` over
/// `gamma >= 0`. Candidates are zero and the nonnegative real roots of
/// `x^3 - lambda x + tau / (2 rho)`; ties break toward the smaller value.
pub fn shrink_eigenvalue(lambda: f64, params: &ShrinkageParams) -> f64 {
    let lambda = lambda.max(0.0);
    let q = params.tau / (2.0 * params.rho);
    let mut candidates = vec![0.0];
    for r in depressed_cubic_real_roots(-lambda, q) {
        if r > 0.0 {
            candidates.push(r);
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = candidates[0];
    let mut best_g = shrink_objective(lambda, best, params);
    for &c in &candidates[1..] {
        let g = shrink_objective(lambda, c, params);
        if g < best_g {
            best = c;
            best_g = g;
        }
    }
    best
}

/// Closed-form robust KPCA of a PSD Gram matrix.
///
/// Eigenvalues are clamped to zero within the PSD tolerance (values below
/// `-PSD_TOL * lambda_max` are rejected), each is shrunk independently, and
/// the attained objective `sum_i g(lambda_i, spectrum_i)` is returned next to
/// the basis.
pub fn robust_kpca(k: &DMatrix<f64>, params: &ShrinkageParams) -> Result<(FeatureBasis, f64)> {
    let eig = sym_eig(k)?;
    robust_kpca_from_eig(&eig, params)
}

/// Same as [`robust_kpca`] but reuses an existing eigendecomposition, which
/// is the cheap path when sweeping `tau` or `rho` over a fixed Gram matrix.
pub fn robust_kpca_from_eig(
    eig: &EigenDecomposition,
    params: &ShrinkageParams,
) -> Result<(FeatureBasis, f64)> {
    let lambda_max = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let floor = -PSD_TOL * lambda_max.max(0.0);
    let mut clamped = eig.eigenvalues.clone();
    for v in clamped.iter_mut() {
        if *v < floor {
            return Err(Error::InvalidInput(format!(
                "matrix is not positive semidefinite: eigenvalue {v:.6e} below tolerance {floor:.6e}"
            )));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mut spectrum = DVector::zeros(clamped.len());
    let mut objective = 0.0;
    for (i, &lambda) in clamped.iter().enumerate() {
        let g = shrink_eigenvalue(lambda, params);
        spectrum[i] = g;
        objective += shrink_objective(lambda, g, params);
    }
    let basis = FeatureBasis::new(spectrum, eig.eigenvectors.clone())?;
    Ok((basis, objective))
}
