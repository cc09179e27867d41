//! Concrete inverse problems: masked matrix completion and non-rigid
//! structure from motion, plus the camera machinery and the linear
//! trace-norm baseline.

mod cameras;
mod tnh;

pub use cameras::{
    quaternion_to_orthographic, refine_cameras, rigid_factorization_init, CameraSequence,
};
pub use tnh::{svt, tnh_solve, TnhOutcome};

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::lm::RowSparseJacobian;
use crate::preimage::LossFunction;

/// Observation matrix `W` plus a binary mask `Z` of the same shape
/// (`true` = observed). Masked-out entries of `W` are ignored by all
/// consumers.
#[derive(Debug, Clone)]
pub struct MaskedObservations {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

impl MaskedObservations {
    pub fn new(values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::ShapeMismatch(format!(
                "observations are {}x{} but mask is {}x{}",
                values.nrows(),
                values.ncols(),
                mask.nrows(),
                mask.ncols()
            )));
        }
        for (v, m) in values.iter().zip(mask.iter()) {
            if *m && !v.is_finite() {
                return Err(Error::InvalidInput("observed entries must be finite".into()));
            }
        }
        Ok(Self { values, mask })
    }

    /// All entries observed.
    pub fn dense(values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Observed positions in column-major order.
    pub fn observed_indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let nrows = self.values.nrows();
        let ncols = self.values.ncols();
        (0..ncols)
            .flat_map(move |j| (0..nrows).map(move |i| (i, j)))
            .filter(move |(i, j)| self.mask[(*i, *j)])
    }
}

/// Masked completion residuals `(W_ij - S_ij)` over the observed entries.
/// The squared sum equals the masked Frobenius loss.
pub fn completion_loss(obs: &MaskedObservations, s: &DMatrix<f64>) -> Result<DVector<f64>> {
    if obs.values().shape() != s.shape() {
        return Err(Error::ShapeMismatch(format!(
            "observations are {}x{} but the estimate is {}x{}",
            obs.nrows(),
            obs.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    let loss = CompletionLoss::new(obs);
    let mut out = vec![0.0; loss.residual_count()];
    loss.residuals_into(s, &mut out);
    Ok(DVector::from_vec(out))
}

/// Matrix-completion data term as a [`LossFunction`] over the `m x n`
/// estimate (kernel samples are its columns).
pub struct CompletionLoss<'a> {
    obs: &'a MaskedObservations,
}

impl<'a> CompletionLoss<'a> {
    pub fn new(obs: &'a MaskedObservations) -> Self {
        Self { obs }
    }
}

impl LossFunction for CompletionLoss<'_> {
    fn data_shape(&self) -> (usize, usize) {
        (self.obs.nrows(), self.obs.ncols())
    }

    fn residual_count(&self) -> usize {
        self.obs.observed_count()
    }

    fn residuals_into(&self, s: &DMatrix<f64>, out: &mut [f64]) {
        for (k, (i, j)) in self.obs.observed_indices().enumerate() {
            out[k] = self.obs.values()[(i, j)] - s[(i, j)];
        }
    }

    fn jacobian_rows(&self, _s: &DMatrix<f64>, jac: &mut RowSparseJacobian) {
        let m = self.obs.nrows();
        for (i, j) in self.obs.observed_indices() {
            jac.push_row(&[j * m + i], &[-1.0]);
        }
    }
}

/// Per-frame 3D point sets for a sequence of `frames` frames and `points`
/// points, stored as a `3F x N` matrix: rows `3f .. 3f + 3` hold frame `f`,
/// column `j` stacks point `j`'s coordinates across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSequence {
    frames: usize,
    matrix: DMatrix<f64>,
}

impl ShapeSequence {
    pub fn new(matrix: DMatrix<f64>, frames: usize) -> Result<Self> {
        if frames == 0 || matrix.nrows() != 3 * frames || matrix.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "shape matrix is {}x{}, expected {}x(N>=1)",
                matrix.nrows(),
                matrix.ncols(),
                3 * frames
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("shape matrix has non-finite entries".into()));
        }
        Ok(Self { frames, matrix })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn points(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn point(&self, frame: usize, j: usize) -> Vector3<f64> {
        Vector3::new(
            self.matrix[(3 * frame, j)],
            self.matrix[(3 * frame + 1, j)],
            self.matrix[(3 * frame + 2, j)],
        )
    }

    pub fn set_point(&mut self, frame: usize, j: usize, p: Vector3<f64>) {
        self.matrix[(3 * frame, j)] = p.x;
        self.matrix[(3 * frame + 1, j)] = p.y;
        self.matrix[(3 * frame + 2, j)] = p.z;
    }

    /// Reshapes into the kernel-sample view: a `3N x F` matrix whose column
    /// `f` is frame `f`'s full shape vector (point-major: row `3p + a`).
    pub fn to_sample_matrix(&self) -> DMatrix<f64> {
        let n = self.points();
        DMatrix::from_fn(3 * n, self.frames, |r, f| {
            let p = r / 3;
            let a = r % 3;
            self.matrix[(3 * f + a, p)]
        })
    }

    /// Inverse of [`ShapeSequence::to_sample_matrix`].
    pub fn from_sample_matrix(samples: &DMatrix<f64>, frames: usize) -> Result<Self> {
        if samples.ncols() != frames || samples.nrows() % 3 != 0 || samples.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "sample matrix is {}x{}, expected (3N)x{}",
                samples.nrows(),
                samples.ncols(),
                frames
            )));
        }
        let n = samples.nrows() / 3;
        let matrix = DMatrix::from_fn(3 * frames, n, |r, p| {
            let f = r / 3;
            let a = r % 3;
            samples[(3 * p + a, f)]
        });
        Self::new(matrix, frames)
    }
}

/// Reprojection residuals `w_f(x_j) - R_f s_f(x_j)` (a 2-vector per observed
/// frame/point pair). The squared sum equals the masked reprojection loss.
pub fn nrsfm_loss(
    obs: &MaskedObservations,
    cams: &CameraSequence,
    shapes: &ShapeSequence,
) -> Result<DVector<f64>> {
    let loss = NrsfmLoss::new(obs, cams)?;
    if shapes.frames() != cams.len() || shapes.points() != obs.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "shapes cover {} frames x {} points, observations {} frames x {} points",
            shapes.frames(),
            shapes.points(),
            cams.len(),
            obs.ncols()
        )));
    }
    let sample = shapes.to_sample_matrix();
    let mut out = vec![0.0; loss.residual_count()];
    loss.residuals_into(&sample, &mut out);
    Ok(DVector::from_vec(out))
}

/// NRSfM data term as a [`LossFunction`] over the kernel-sample view of the
/// shapes (`3N x F`, one column per frame).
pub struct NrsfmLoss<'a> {
    obs: &'a MaskedObservations,
    cams: &'a CameraSequence,
    /// Observed (frame, point) pairs in residual order.
    observed: Vec<(usize, usize)>,
}

impl<'a> NrsfmLoss<'a> {
    pub fn new(obs: &'a MaskedObservations, cams: &'a CameraSequence) -> Result<Self> {
        if obs.nrows() != 2 * cams.len() {
            return Err(Error::ShapeMismatch(format!(
                "observations have {} rows, cameras cover {} frames",
                obs.nrows(),
                cams.len()
            )));
        }
        let mut observed = Vec::new();
        for f in 0..cams.len() {
            for p in 0..obs.ncols() {
                let (a, b) = (obs.mask()[(2 * f, p)], obs.mask()[(2 * f + 1, p)]);
                if a != b {
                    return Err(Error::InvalidInput(format!(
                        "visibility of frame {f}, point {p} differs between the two image rows"
                    )));
                }
                if a {
                    observed.push((f, p));
                }
            }
        }
        Ok(Self { obs, cams, observed })
    }

    pub fn observed_pairs(&self) -> &[(usize, usize)] {
        &self.observed
    }
}

impl LossFunction for NrsfmLoss<'_> {
    fn data_shape(&self) -> (usize, usize) {
        (3 * self.obs.ncols(), self.cams.len())
    }

    fn residual_count(&self) -> usize {
        2 * self.observed.len()
    }

    fn residuals_into(&self, s: &DMatrix<f64>, out: &mut [f64]) {
        for (k, &(f, p)) in self.observed.iter().enumerate() {
            let r = self.cams.projection(f);
            let pt = Vector3::new(s[(3 * p, f)], s[(3 * p + 1, f)], s[(3 * p + 2, f)]);
            let proj = r * pt;
            out[2 * k] = self.obs.values()[(2 * f, p)] - proj.x;
            out[2 * k + 1] = self.obs.values()[(2 * f + 1, p)] - proj.y;
        }
    }

    fn jacobian_rows(&self, _s: &DMatrix<f64>, jac: &mut RowSparseJacobian) {
        let rows_per_frame = 3 * self.obs.ncols();
        for &(f, p) in &self.observed {
            let r = self.cams.projection(f);
            let base = f * rows_per_frame + 3 * p;
            let cols = [base, base + 1, base + 2];
            for k in 0..2 {
                let vals = [-r[(k, 0)], -r[(k, 1)], -r[(k, 2)]];
                jac.push_row(&cols, &vals);
            }
        }
    }
}
