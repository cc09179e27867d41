//! Quantitative evaluation: kernel-matrix (manifold) error, nearest-neighbor
//! classification through the learned embedding, completion RMS, and the
//! normalized mean 3D reconstruction error.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::{kernel_matrix, DataMatrix, KernelModel};
use crate::problems::ShapeSequence;
use crate::shrink::{FeatureBasis, RANK_TOL};

/// Data points with one class identifier per sample.
#[derive(Debug, Clone)]
pub struct LabeledData {
    data: DataMatrix,
    labels: Vec<u32>,
}

impl LabeledData {
    pub fn new(data: DataMatrix, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} samples",
                labels.len(),
                data.len()
            )));
        }
        Ok(Self { data, labels })
    }

    pub fn data(&self) -> &DataMatrix {
        &self.data
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// Squared Frobenius norm of `K_est - K_gt`.
pub fn manifold_error(k_est: &DMatrix<f64>, k_gt: &DMatrix<f64>) -> Result<f64> {
    if k_est.shape() != k_gt.shape() {
        return Err(Error::ShapeMismatch(format!(
            "kernel matrices are {}x{} and {}x{}",
            k_est.nrows(),
            k_est.ncols(),
            k_gt.nrows(),
            k_gt.ncols()
        )));
    }
    Ok((k_est - k_gt).norm_squared())
}

/// [`manifold_error`] divided by the squared Frobenius norm of `K_gt`.
pub fn manifold_error_normalized(k_est: &DMatrix<f64>, k_gt: &DMatrix<f64>) -> Result<f64> {
    let raw = manifold_error(k_est, k_gt)?;
    let denom = k_gt.norm_squared();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric("reference kernel matrix is zero".into()));
    }
    Ok(raw / denom)
}

/// Embeds points into the learned manifold coordinates: component `j` of a
/// point `t` is `(1 / spectrum_j) * sum_i U_ij k(s_i, t)`, restricted to the
/// components above the rank tolerance.
fn embed(
    basis: &FeatureBasis,
    kernel_columns: &DMatrix<f64>, // k(s_i, t) per column t
    kept: &[usize],
) -> DMatrix<f64> {
    let coords = basis.basis().transpose() * kernel_columns;
    let mut out = DMatrix::zeros(kept.len(), kernel_columns.ncols());
    for (row, &j) in kept.iter().enumerate() {
        let scale = 1.0 / basis.spectrum()[j];
        for c in 0..kernel_columns.ncols() {
            out[(row, c)] = coords[(j, c)] * scale;
        }
    }
    out
}

/// 1-nearest-neighbor classification of `test` by embedding both sets into
/// the manifold coordinates of `basis` (built from `train`'s Gram matrix).
/// Returns the predicted labels and the error rate against the test labels.
pub fn knn_classify(
    basis: &FeatureBasis,
    train: &LabeledData,
    test: &LabeledData,
    kernel: &KernelModel,
) -> Result<(Vec<u32>, f64)> {
    let n = train.data().len();
    if basis.basis().nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "feature basis covers {} samples, training set has {}",
            basis.basis().nrows(),
            n
        )));
    }
    if train.data().dim() != test.data().dim() {
        return Err(Error::ShapeMismatch(format!(
            "train dimension {} != test dimension {}",
            train.data().dim(),
            test.data().dim()
        )));
    }
    let max = basis.spectrum().max();
    let kept: Vec<usize> =
        (0..n).filter(|j| basis.spectrum()[*j] > RANK_TOL * max).collect();
    if kept.is_empty() {
        return Err(Error::DegenerateData(
            "all manifold components shrunk to zero; nothing to project onto".into(),
        ));
    }

    let k_train = kernel_matrix(train.data(), kernel);
    let train_embedded = embed(basis, &k_train, &kept);

    let m = test.data().len();
    let mut k_cross = DMatrix::zeros(n, m);
    for t in 0..m {
        for i in 0..n {
            k_cross[(i, t)] = kernel.eval(train.data().column(i), test.data().column(t));
        }
    }
    let test_embedded = embed(basis, &k_cross, &kept);

    let mut predicted = Vec::with_capacity(m);
    let mut wrong = 0usize;
    for t in 0..m {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for i in 0..n {
            let mut d = 0.0;
            for r in 0..kept.len() {
                let diff = test_embedded[(r, t)] - train_embedded[(r, i)];
                d += diff * diff;
            }
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        let label = train.labels()[best];
        predicted.push(label);
        if label != test.labels()[t] {
            wrong += 1;
        }
    }
    Ok((predicted, wrong as f64 / m as f64))
}

/// Root-mean-square errors of a completion: over the deleted entries
/// (`deleted = true`) and over all entries.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRms {
    pub deleted: f64,
    pub overall: f64,
}

pub fn completion_rms(
    s_est: &DMatrix<f64>,
    s_gt: &DMatrix<f64>,
    deleted: &DMatrix<bool>,
) -> Result<CompletionRms> {
    if s_est.shape() != s_gt.shape() || s_est.shape() != deleted.shape() {
        return Err(Error::ShapeMismatch(format!(
            "estimate {}x{}, reference {}x{}, deletion mask {}x{}",
            s_est.nrows(),
            s_est.ncols(),
            s_gt.nrows(),
            s_gt.ncols(),
            deleted.nrows(),
            deleted.ncols()
        )));
    }
    let mut del_sum = 0.0;
    let mut del_count = 0usize;
    let mut all_sum = 0.0;
    for j in 0..s_est.ncols() {
        for i in 0..s_est.nrows() {
            let d = s_est[(i, j)] - s_gt[(i, j)];
            all_sum += d * d;
            if deleted[(i, j)] {
                del_sum += d * d;
                del_count += 1;
            }
        }
    }
    if del_count == 0 {
        return Err(Error::UndefinedMetric("no deleted entries to evaluate".into()));
    }
    Ok(CompletionRms {
        deleted: (del_sum / del_count as f64).sqrt(),
        overall: (all_sum / (s_est.nrows() * s_est.ncols()) as f64).sqrt(),
    })
}

fn e3d_directed(est: &ShapeSequence, gt: &ShapeSequence, flip_depth: bool) -> f64 {
    let frames = gt.frames();
    let n = gt.points();
    let mut total = 0.0;
    for f in 0..frames {
        for p in 0..n {
            let mut e = est.point(f, p);
            if flip_depth {
                e.z = -e.z;
            }
            total += (e - gt.point(f, p)).norm();
        }
    }
    total / (frames * n) as f64
}

/// Normalized mean 3D error: the mean pointwise Euclidean distance divided
/// by the mean of the three per-coordinate standard deviations of the
/// reference structure. The depth-reflected estimate is also scored and the
/// better value returned.
pub fn e3d(est: &ShapeSequence, gt: &ShapeSequence) -> Result<f64> {
    if est.frames() != gt.frames() || est.points() != gt.points() {
        return Err(Error::ShapeMismatch(format!(
            "estimate covers {}x{}, reference {}x{}",
            est.frames(),
            est.points(),
            gt.frames(),
            gt.points()
        )));
    }
    let frames = gt.frames();
    let n = gt.points();
    let count = (frames * n) as f64;
    let mut sigma = 0.0;
    for axis in 0..3 {
        let mut mean = 0.0;
        for f in 0..frames {
            for p in 0..n {
                mean += gt.matrix()[(3 * f + axis, p)];
            }
        }
        mean /= count;
        let mut var = 0.0;
        for f in 0..frames {
            for p in 0..n {
                let d = gt.matrix()[(3 * f + axis, p)] - mean;
                var += d * d;
            }
        }
        sigma += (var / count).sqrt();
    }
    sigma /= 3.0;
    if sigma == 0.0 {
        return Err(Error::UndefinedMetric("reference structure has zero variance".into()));
    }
    let direct = e3d_directed(est, gt, false);
    let flipped = e3d_directed(est, gt, true);
    Ok(direct.min(flipped) / sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shrink::{robust_kpca, ShrinkageParams};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn manifold_error_examples() {
        let a = DMatrix::from_element(2, 2, 1.0);
        assert_eq!(manifold_error(&a, &a).unwrap(), 0.0);
        let z = DMatrix::zeros(2, 2);
        // ||K_gt||_F^2 = 7
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        assert_relative_eq!(manifold_error(&z, &k).unwrap(), 7.0, epsilon = 1e-14);
        assert_relative_eq!(manifold_error_normalized(&z, &k).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn manifold_error_matches_elementwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let direct: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        assert_relative_eq!(manifold_error(&a, &b).unwrap(), direct, epsilon = 1e-12);
    }

    #[test]
    fn manifold_error_rejects_shape_mismatch() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(3, 3);
        assert!(manifold_error(&a, &b).is_err());
    }

    fn labeled_clusters() -> LabeledData {
        // two well-separated clusters in 2-d
        let mut vals = Vec::new();
        let mut labels = Vec::new();
        for j in 0..6 {
            let t = j as f64 * 0.1;
            vals.extend_from_slice(&[t.cos() * 0.2, t.sin() * 0.2]);
            labels.push(0);
        }
        for j in 0..6 {
            let t = j as f64 * 0.1;
            vals.extend_from_slice(&[6.0 + t.sin() * 0.2, 6.0 + t.cos() * 0.2]);
            labels.push(1);
        }
        let data = DataMatrix::new(DMatrix::from_column_slice(2, 12, &vals)).unwrap();
        LabeledData::new(data, labels).unwrap()
    }

    #[test]
    fn train_as_test_is_error_free() {
        let train = labeled_clusters();
        let kernel = KernelModel::rbf(0.5).unwrap();
        let k = kernel_matrix(train.data(), &kernel);
        let params = ShrinkageParams::new(1e-6, 1.0).unwrap();
        let (basis, _) = robust_kpca(&k, &params).unwrap();
        let (predicted, err) = knn_classify(&basis, &train, &train, &kernel).unwrap();
        assert_eq!(predicted, train.labels());
        assert_eq!(err, 0.0);
    }

    #[test]
    fn separated_gaussians_classify_perfectly() {
        let train = labeled_clusters();
        let kernel = KernelModel::rbf(0.5).unwrap();
        let k = kernel_matrix(train.data(), &kernel);
        let params = ShrinkageParams::new(1e-4, 1.0).unwrap();
        let (basis, _) = robust_kpca(&k, &params).unwrap();
        // test points jittered around the cluster centers
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut vals = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..10 {
            vals.extend_from_slice(&[
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            ]);
            labels.push(0);
        }
        for _ in 0..10 {
            vals.extend_from_slice(&[
                6.0 + rng.random_range(-0.4..0.4),
                6.0 + rng.random_range(-0.4..0.4),
            ]);
            labels.push(1);
        }
        let test = LabeledData::new(
            DataMatrix::new(DMatrix::from_column_slice(2, 20, &vals)).unwrap(),
            labels,
        )
        .unwrap();
        let (_, err) = knn_classify(&basis, &train, &test, &kernel).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn degenerate_basis_is_rejected() {
        let train = labeled_clusters();
        let kernel = KernelModel::rbf(0.5).unwrap();
        let k = kernel_matrix(train.data(), &kernel);
        let eig = crate::kernel::sym_eig(&k).unwrap();
        let basis = FeatureBasis::new(DVector::zeros(12), eig.eigenvectors).unwrap();
        assert!(matches!(
            knn_classify(&basis, &train, &train, &kernel),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn completion_rms_examples() {
        let gt = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let deleted = DMatrix::from_fn(2, 2, |i, j| i == 0 && j == 0);
        // exact recovery
        let r = completion_rms(&gt, &gt, &deleted).unwrap();
        assert_eq!(r.deleted, 0.0);
        assert_eq!(r.overall, 0.0);
        // single deleted entry off by 2
        let mut est = gt.clone();
        est[(0, 0)] += 2.0;
        let r = completion_rms(&est, &gt, &deleted).unwrap();
        assert_relative_eq!(r.deleted, 2.0, epsilon = 1e-14);
        assert_relative_eq!(r.overall, 1.0, epsilon = 1e-14);
        // no deleted entries
        let none = DMatrix::from_element(2, 2, false);
        assert!(matches!(
            completion_rms(&gt, &gt, &none),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn completion_rms_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gt = DMatrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let est = DMatrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let deleted = DMatrix::from_fn(5, 4, |i, j| (i * 4 + j) % 3 == 0);
        let r = completion_rms(&est, &gt, &deleted).unwrap();
        let mut sum = 0.0;
        let mut count = 0;
        for i in 0..5 {
            for j in 0..4 {
                if deleted[(i, j)] {
                    sum += (est[(i, j)] - gt[(i, j)]).powi(2);
                    count += 1;
                }
            }
        }
        assert_relative_eq!(r.deleted, (sum / count as f64).sqrt(), epsilon = 1e-12);
    }

    fn random_shapes(frames: usize, n: usize, seed: u64) -> ShapeSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ShapeSequence::new(
            DMatrix::from_fn(3 * frames, n, |_, _| rng.random_range(-1.0..1.0)),
            frames,
        )
        .unwrap()
    }

    #[test]
    fn e3d_zero_on_identical_structures() {
        let gt = random_shapes(4, 7, 8);
        assert_eq!(e3d(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn e3d_uniform_offset_scales_with_sigma() {
        let gt = random_shapes(5, 6, 9);
        let delta = 0.3;
        let mut est = gt.clone();
        for f in 0..5 {
            for p in 0..6 {
                let q = gt.point(f, p) + nalgebra::Vector3::new(delta, delta, delta);
                est.set_point(f, p, q);
            }
        }
        // sigma recomputed exactly as the metric defines it
        let mut sigma = 0.0;
        for axis in 0..3 {
            let vals: Vec<f64> =
                (0..5).flat_map(|f| (0..6).map(move |p| (f, p))).map(|(f, p)| {
                    gt.matrix()[(3 * f + axis, p)]
                }).collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            sigma += var.sqrt();
        }
        sigma /= 3.0;
        let expect = 3.0_f64.sqrt() * delta / sigma;
        assert_relative_eq!(e3d(&est, &gt).unwrap(), expect, epsilon = 1e-10);
    }

    #[test]
    fn e3d_prefers_depth_flip_when_better() {
        let gt = random_shapes(3, 5, 10);
        let mut est = gt.clone();
        for f in 0..3 {
            for p in 0..5 {
                let mut q = gt.point(f, p);
                q.z = -q.z;
                est.set_point(f, p, q);
            }
        }
        assert_eq!(e3d(&est, &gt).unwrap(), 0.0);
    }

    #[test]
    fn e3d_invariant_to_consistent_relabeling() {
        let gt = random_shapes(3, 5, 11);
        let est = random_shapes(3, 5, 12);
        let base = e3d(&est, &gt).unwrap();
        // permute points consistently in both
        let perm = [3usize, 0, 4, 1, 2];
        let permute = |s: &ShapeSequence| {
            let m = DMatrix::from_fn(9, 5, |r, c| s.matrix()[(r, perm[c])]);
            ShapeSequence::new(m, 3).unwrap()
        };
        let shuffled = e3d(&permute(&est), &permute(&gt)).unwrap();
        assert_relative_eq!(base, shuffled, epsilon = 1e-12);
    }

    #[test]
    fn e3d_rejects_zero_variance_reference() {
        let gt = ShapeSequence::new(DMatrix::zeros(3, 4), 1).unwrap();
        let est = random_shapes(1, 4, 13);
        assert!(matches!(e3d(&est, &gt), Err(Error::UndefinedMetric(_))));
    }
}
