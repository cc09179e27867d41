//! Quaternion-parametrized orthographic cameras: conversion, per-frame
//! refinement, and rigid-factorization initialization.

use nalgebra::{
    DMatrix, DVector, Matrix2x3, Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3, Vector4,
};

use crate::error::{Error, Result};
use crate::lm::{lm_minimize, LmConfig, ResidualProblem, RowSparseJacobian};
use crate::problems::{MaskedObservations, ShapeSequence};

/// Per-frame unit quaternions plus the derived `2 x 3` orthographic
/// projection matrices (the first two rows of each rotation).
#[derive(Debug, Clone)]
pub struct CameraSequence {
    quaternions: Vec<UnitQuaternion<f64>>,
    projections: Vec<Matrix2x3<f64>>,
}

impl CameraSequence {
    pub fn from_quaternions(quaternions: Vec<UnitQuaternion<f64>>) -> Self {
        let projections = quaternions.iter().map(|q| projection_of(q)).collect();
        Self { quaternions, projections }
    }

    /// Builds from raw `[w, x, y, z]` components, normalizing each.
    pub fn from_raw(raw: &[[f64; 4]]) -> Result<Self> {
        let mut quats = Vec::with_capacity(raw.len());
        for (i, q) in raw.iter().enumerate() {
            let v = Vector4::new(q[0], q[1], q[2], q[3]);
            if !v.iter().all(|c| c.is_finite()) || v.norm() == 0.0 {
                return Err(Error::InvalidInput(format!(
                    "quaternion {i} is zero or non-finite"
                )));
            }
            quats.push(UnitQuaternion::new_normalize(nalgebra::Quaternion::new(
                q[0], q[1], q[2], q[3],
            )));
        }
        Ok(Self::from_quaternions(quats))
    }

    pub fn len(&self) -> usize {
        self.quaternions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quaternions.is_empty()
    }

    pub fn quaternion(&self, frame: usize) -> &UnitQuaternion<f64> {
        &self.quaternions[frame]
    }

    pub fn quaternions(&self) -> &[UnitQuaternion<f64>] {
        &self.quaternions
    }

    pub fn projection(&self, frame: usize) -> &Matrix2x3<f64> {
        &self.projections[frame]
    }
}

fn projection_of(q: &UnitQuaternion<f64>) -> Matrix2x3<f64> {
    let r = q.to_rotation_matrix();
    let m = r.matrix();
    Matrix2x3::new(m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)])
}

/// First two rows of the rotation matrix of `q = [w, x, y, z]` after
/// normalization. The zero quaternion is rejected.
pub fn quaternion_to_orthographic(q: &Vector4<f64>) -> Result<Matrix2x3<f64>> {
    if !q.iter().all(|c| c.is_finite()) || q.norm() == 0.0 {
        return Err(Error::InvalidInput("quaternion must be nonzero and finite".into()));
    }
    let uq = UnitQuaternion::new_normalize(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    Ok(projection_of(&uq))
}

/// Homogeneous quadratic rotation form: `R(q) = M(q) / |q|^2`.
fn rotation_numerator(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    )
}

/// Partials of the numerator `M(q)` with respect to each component.
fn rotation_numerator_partials(q: &Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        Matrix3::new(2. * w, -2. * z, 2. * y, 2. * z, 2. * w, -2. * x, -2. * y, 2. * x, 2. * w),
        Matrix3::new(2. * x, 2. * y, 2. * z, 2. * y, -2. * x, -2. * w, 2. * z, 2. * w, -2. * x),
        Matrix3::new(-2. * y, 2. * x, 2. * w, 2. * x, 2. * y, 2. * z, -2. * w, 2. * z, -2. * y),
        Matrix3::new(-2. * z, -2. * w, 2. * x, 2. * w, -2. * z, 2. * y, 2. * x, 2. * y, 2. * z),
    ]
}

/// Single-frame reprojection residuals over raw quaternion components.
struct FrameReprojection {
    points: Vec<(Vector3<f64>, Vector2<f64>)>,
}

impl ResidualProblem for FrameReprojection {
    fn variable_count(&self) -> usize {
        4
    }

    fn residual_count(&self) -> usize {
        2 * self.points.len()
    }

    fn residuals_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let q = Vector4::new(x[0], x[1], x[2], x[3]);
        let n2 = q.norm_squared();
        let m = rotation_numerator(&q) / n2;
        for (k, (s, w)) in self.points.iter().enumerate() {
            let proj = &m * s;
            out[2 * k] = w.x - proj.x;
            out[2 * k + 1] = w.y - proj.y;
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<RowSparseJacobian> {
        let q = Vector4::new(x[0], x[1], x[2], x[3]);
        let n2 = q.norm_squared();
        let m = rotation_numerator(&q);
        let dm = rotation_numerator_partials(&q);
        // d(M/n2)/dq_k = dM/dq_k / n2 - M * 2 q_k / n2^2
        let dr: Vec<Matrix3<f64>> =
            (0..4).map(|k| dm[k] / n2 - &m * (2.0 * q[k] / (n2 * n2))).collect();
        let mut jac = RowSparseJacobian::new(4);
        let cols = [0usize, 1, 2, 3];
        for (s, _) in &self.points {
            for row in 0..2 {
                let mut vals = [0.0; 4];
                for k in 0..4 {
                    let dp = &dr[k] * s;
                    vals[k] = -dp[row];
                }
                jac.push_row(&cols, &vals);
            }
        }
        Some(jac)
    }
}

/// Refines each camera independently by LM over its quaternion, minimizing
/// that frame's reprojection residuals against fixed shapes. Frames with
/// fewer than three observed points are left at their input value and
/// flagged.
pub fn refine_cameras(
    obs: &MaskedObservations,
    shapes: &ShapeSequence,
    initial: &CameraSequence,
    cfg: &LmConfig,
) -> Result<(CameraSequence, Vec<bool>)> {
    let frames = initial.len();
    if obs.nrows() != 2 * frames || shapes.frames() != frames || shapes.points() != obs.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "observations {}x{}, shapes {} frames x {} points, cameras {} frames",
            obs.nrows(),
            obs.ncols(),
            shapes.frames(),
            shapes.points(),
            frames
        )));
    }
    let mut quats = Vec::with_capacity(frames);
    let mut skipped = vec![false; frames];
    for f in 0..frames {
        let mut points = Vec::new();
        for p in 0..obs.ncols() {
            if obs.mask()[(2 * f, p)] && obs.mask()[(2 * f + 1, p)] {
                let w = Vector2::new(obs.values()[(2 * f, p)], obs.values()[(2 * f + 1, p)]);
                points.push((shapes.point(f, p), w));
            }
        }
        if points.len() < 3 {
            skipped[f] = true;
            quats.push(*initial.quaternion(f));
            continue;
        }
        let problem = FrameReprojection { points };
        let q0 = initial.quaternion(f);
        let x0 = DVector::from_vec(vec![q0.w, q0.i, q0.j, q0.k]);
        let out = lm_minimize(&problem, &x0, cfg)?;
        quats.push(UnitQuaternion::new_normalize(nalgebra::Quaternion::new(
            out.x[0], out.x[1], out.x[2], out.x[3],
        )));
    }
    Ok((CameraSequence::from_quaternions(quats), skipped))
}

/// Nearest matrix with orthonormal rows to a `2 x 3` block, via its SVD.
fn orthonormalize_rows(a: &Matrix2x3<f64>) -> Matrix2x3<f64> {
    let svd = a.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    u * vt
}

/// Camera initialization by rank-3 factorization of the centered measurement
/// matrix.
///
/// Missing entries are filled with the per-point means of the observed `u`
/// and `v` coordinates, rows are centered over their observed entries, and
/// the rank-3 factor is upgraded with the orthonormality constraints before
/// each `2 x 3` block is projected to the nearest row-orthonormal matrix and
/// converted to a quaternion.
pub fn rigid_factorization_init(obs: &MaskedObservations) -> Result<CameraSequence> {
    if obs.nrows() % 2 != 0 || obs.nrows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "observation matrix must have 2F rows, got {}",
            obs.nrows()
        )));
    }
    let frames = obs.nrows() / 2;
    let n = obs.ncols();
    for f in 0..frames {
        let count = (0..n)
            .filter(|p| obs.mask()[(2 * f, *p)] && obs.mask()[(2 * f + 1, *p)])
            .count();
        if count < 3 {
            return Err(Error::InvalidInput(format!(
                "frame {f} has {count} observed points; rigid initialization needs at least 3"
            )));
        }
    }

    // fill missing entries with per-point coordinate means
    let mut w = obs.values().clone();
    for p in 0..n {
        for parity in 0..2 {
            let mut sum = 0.0;
            let mut count = 0usize;
            for f in 0..frames {
                if obs.mask()[(2 * f + parity, p)] {
                    sum += obs.values()[(2 * f + parity, p)];
                    count += 1;
                }
            }
            let mean = if count > 0 { sum / count as f64 } else { 0.0 };
            for f in 0..frames {
                if !obs.mask()[(2 * f + parity, p)] {
                    w[(2 * f + parity, p)] = mean;
                }
            }
        }
    }

    // center each row over its observed entries
    for r in 0..2 * frames {
        let mut sum = 0.0;
        let mut count = 0usize;
        for p in 0..n {
            if obs.mask()[(r, p)] {
                sum += obs.values()[(r, p)];
                count += 1;
            }
        }
        let mean = sum / count as f64;
        for p in 0..n {
            w[(r, p)] -= mean;
        }
    }

    let svd = w.clone().svd(true, true);
    let sv = &svd.singular_values;
    if sv.len() < 3 || sv[2] <= 1e-10 * sv[0] {
        return Err(Error::DegenerateData(
            "centered measurements have rank below 3; cannot factorize".into(),
        ));
    }
    let u = svd.u.as_ref().unwrap();
    // motion factor M = U_3 sqrt(Sigma_3)
    let mut motion = DMatrix::zeros(2 * frames, 3);
    for c in 0..3 {
        let scale = sv[c].sqrt();
        for r in 0..2 * frames {
            motion[(r, c)] = u[(r, c)] * scale;
        }
    }

    // metric upgrade: find symmetric H with a_f H a_f^T = b_f H b_f^T = 1 and
    // a_f H b_f^T = 0, parameterized by its 6 independent entries
    let quad_row = |u: &[f64; 3], v: &[f64; 3]| -> [f64; 6] {
        [
            u[0] * v[0],
            u[0] * v[1] + u[1] * v[0],
            u[0] * v[2] + u[2] * v[0],
            u[1] * v[1],
            u[1] * v[2] + u[2] * v[1],
            u[2] * v[2],
        ]
    };
    let mut sys = DMatrix::zeros(3 * frames, 6);
    let mut rhs = DVector::zeros(3 * frames);
    for f in 0..frames {
        let a = [motion[(2 * f, 0)], motion[(2 * f, 1)], motion[(2 * f, 2)]];
        let b = [motion[(2 * f + 1, 0)], motion[(2 * f + 1, 1)], motion[(2 * f + 1, 2)]];
        for (k, (row, target)) in
            [(quad_row(&a, &a), 1.0), (quad_row(&b, &b), 1.0), (quad_row(&a, &b), 0.0)]
                .into_iter()
                .enumerate()
        {
            for c in 0..6 {
                sys[(3 * f + k, c)] = row[c];
            }
            rhs[3 * f + k] = target;
        }
    }
    let h = sys
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::NumericalFailure(format!("metric upgrade solve failed: {e}")))?;
    let h_mat =
        Matrix3::new(h[0], h[1], h[2], h[1], h[3], h[4], h[2], h[4], h[5]);

    // factor H = G G^T, clamping nonpositive eigenvalues (deforming scenes
    // can make H indefinite; the output must still be well formed)
    let eig = nalgebra::SymmetricEigen::new(h_mat);
    let max_eig = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut g = Matrix3::zeros();
    for c in 0..3 {
        let lam = eig.eigenvalues[c].max(1e-12 * max_eig);
        let col = eig.eigenvectors.column(c) * lam.sqrt();
        g.set_column(c, &col);
    }

    let mut quats = Vec::with_capacity(frames);
    for f in 0..frames {
        let mf = Matrix2x3::new(
            motion[(2 * f, 0)],
            motion[(2 * f, 1)],
            motion[(2 * f, 2)],
            motion[(2 * f + 1, 0)],
            motion[(2 * f + 1, 1)],
            motion[(2 * f + 1, 2)],
        );
        let r2 = orthonormalize_rows(&(mf * g));
        let r0 = r2.row(0).transpose();
        let r1 = r2.row(1).transpose();
        let r2c = r0.cross(&r1);
        let rot = Matrix3::from_rows(&[
            r2.row(0).into_owned(),
            r2.row(1).into_owned(),
            r2c.transpose().into_owned(),
        ]);
        quats.push(UnitQuaternion::from_rotation_matrix(
            &Rotation3::from_matrix_unchecked(rot),
        ));
    }
    Ok(CameraSequence::from_quaternions(quats))
}
