//! Data-matrix update given a fixed feature basis: a damped least-squares
//! solve over all columns of `S` jointly, stacking the problem's own loss
//! residuals with the kernel consistency residuals
//! `K(S)_{ij} - (C^T C)_{ij}`.
//!
//! The stacked residual sum of squares equals
//! `f(W, S) + (rho / 2) ||K(S) - C^T C||_F^2`: loss blocks contribute their
//! squared sum directly, kernel entries are weighted `sqrt(rho / 2)` on the
//! diagonal and `sqrt(rho)` off the diagonal (each off-diagonal pair appears
//! once).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{kernel_matrix, DataMatrix, KernelFamily, KernelModel};
use crate::lm::{lm_minimize, LmConfig, LmOutcome, ResidualProblem, RowSparseJacobian};
use crate::shrink::FeatureBasis;

/// A data-fidelity term `f(W, S)` expressed as residuals in `S`.
///
/// `S` is always the matrix whose columns are the kernel samples; losses that
/// view the data differently (e.g. per-frame projections) translate
/// internally. Implementations guarantee `value(s) = sum(residuals^2)`.
pub trait LossFunction {
    /// Expected shape of the data matrix.
    fn data_shape(&self) -> (usize, usize);

    fn residual_count(&self) -> usize;

    /// Writes all residuals into `out` (length `residual_count`).
    fn residuals_into(&self, s: &DMatrix<f64>, out: &mut [f64]);

    /// Appends one sparse Jacobian row per residual, with columns indexing
    /// `vec(S)` in column-major order.
    fn jacobian_rows(&self, s: &DMatrix<f64>, jac: &mut RowSparseJacobian);

    /// The scalar loss `f(W, S)`, equal to the residual sum of squares.
    fn value(&self, s: &DMatrix<f64>) -> f64 {
        let mut buf = vec![0.0; self.residual_count()];
        self.residuals_into(s, &mut buf);
        buf.iter().map(|r| r * r).sum()
    }
}

/// The stacked residual problem handed to the LM solver: loss rows first,
/// then one row per kernel entry `i <= j`.
pub struct SubproblemResiduals<'a> {
    loss: &'a dyn LossFunction,
    kernel: &'a KernelModel,
    target: DMatrix<f64>,
    rho: f64,
    dim: usize,
    samples: usize,
}

impl<'a> SubproblemResiduals<'a> {
    pub fn new(
        loss: &'a dyn LossFunction,
        basis: &FeatureBasis,
        kernel: &'a KernelModel,
        rho: f64,
    ) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidInput(format!("rho must be finite and >= 0, got {rho}")));
        }
        let (dim, samples) = loss.data_shape();
        if basis.basis().nrows() != samples {
            return Err(Error::ShapeMismatch(format!(
                "feature basis is {}x{} but the loss expects {} samples",
                basis.basis().nrows(),
                basis.basis().ncols(),
                samples
            )));
        }
        Ok(Self { loss, kernel, target: basis.ctc(), rho, dim, samples })
    }

    fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            (self.rho / 2.0).sqrt()
        } else {
            self.rho.sqrt()
        }
    }

    fn reshape(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.samples, x.as_slice())
    }
}

impl ResidualProblem for SubproblemResiduals<'_> {
    fn variable_count(&self) -> usize {
        self.dim * self.samples
    }

    fn residual_count(&self) -> usize {
        self.loss.residual_count() + self.samples * (self.samples + 1) / 2
    }

    fn residuals_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let s = self.reshape(x);
        let lc = self.loss.residual_count();
        self.loss.residuals_into(&s, &mut out.as_mut_slice()[..lc]);
        let data = DataMatrix::new(s.clone()).expect("finite trial point");
        let k = kernel_matrix(&data, self.kernel);
        let mut idx = lc;
        for i in 0..self.samples {
            for j in i..self.samples {
                out[idx] = self.weight(i, j) * (k[(i, j)] - self.target[(i, j)]);
                idx += 1;
            }
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<RowSparseJacobian> {
        let s = self.reshape(x);
        let d = self.dim;
        let n = self.samples;
        let nnz_guess = self.loss.residual_count() * 3 + n * (n + 1) / 2 * 2 * d;
        let mut jac =
            RowSparseJacobian::with_capacity(d * n, self.residual_count(), nnz_guess);
        self.loss.jacobian_rows(&s, &mut jac);

        let data = DataMatrix::new(s.clone()).ok()?;
        let k = kernel_matrix(&data, self.kernel);
        let mut cols = vec![0usize; 2 * d];
        let mut vals = vec![0.0f64; 2 * d];
        for i in 0..n {
            for j in i..n {
                let w = self.weight(i, j);
                match self.kernel.family() {
                    KernelFamily::Rbf => {
                        if i == j {
                            // K_ii is identically 1: constant residual row
                            jac.push_row(&[], &[]);
                        } else {
                            let coef = -2.0 * self.kernel.gamma() * k[(i, j)] * w;
                            for a in 0..d {
                                let diff = s[(a, i)] - s[(a, j)];
                                cols[a] = i * d + a;
                                vals[a] = coef * diff;
                                cols[d + a] = j * d + a;
                                vals[d + a] = -coef * diff;
                            }
                            jac.push_row(&cols, &vals);
                        }
                    }
                    KernelFamily::Linear => {
                        if i == j {
                            for a in 0..d {
                                cols[a] = i * d + a;
                                vals[a] = 2.0 * w * s[(a, i)];
                            }
                            jac.push_row(&cols[..d], &vals[..d]);
                        } else {
                            for a in 0..d {
                                cols[a] = i * d + a;
                                vals[a] = w * s[(a, j)];
                                cols[d + a] = j * d + a;
                                vals[d + a] = w * s[(a, i)];
                            }
                            jac.push_row(&cols, &vals);
                        }
                    }
                }
            }
        }
        Some(jac)
    }
}

/// Updates the data matrix with the feature basis held fixed, minimizing
/// `f(W, S) + (rho / 2) ||K(S) - C^T C||_F^2` by LM from the warm start `s0`.
/// The returned objective never exceeds the objective at `s0`.
pub fn solve_preimage_step(
    loss: &dyn LossFunction,
    basis: &FeatureBasis,
    s0: &DataMatrix,
    kernel: &KernelModel,
    rho: f64,
    cfg: &LmConfig,
) -> Result<(DataMatrix, LmOutcome)> {
    let (d, n) = loss.data_shape();
    if s0.dim() != d || s0.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "warm start is {}x{} but the loss expects {}x{}",
            s0.dim(),
            s0.len(),
            d,
            n
        )));
    }
    let problem = SubproblemResiduals::new(loss, basis, kernel, rho)?;
    let x0 = DVector::from_column_slice(s0.matrix().as_slice());
    let outcome = lm_minimize(&problem, &x0, cfg)?;
    let s = DataMatrix::new(DMatrix::from_column_slice(d, n, outcome.x.as_slice()))?;
    Ok((s, outcome))
}
