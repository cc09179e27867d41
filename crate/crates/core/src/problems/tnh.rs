//! Linear trace-norm baseline: proximal-gradient minimization of
//! `f(S) + tau ||S||_*` where `f` is either the masked completion loss or
//! the fixed-camera reprojection loss.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::problems::{CameraSequence, MaskedObservations, ShapeSequence};

/// Soft-thresholds the singular values of `m` by `mu` (the proximal operator
/// of `mu ||.||_*`). `mu = 0` returns the input unchanged.
pub fn svt(m: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    svt_with_trace_norm(m, mu).0
}

/// As [`svt`], additionally returning the trace norm of the result.
fn svt_with_trace_norm(m: &DMatrix<f64>, mu: f64) -> (DMatrix<f64>, f64) {
    assert!(mu >= 0.0 && mu.is_finite(), "threshold must be finite and nonnegative");
    if mu == 0.0 {
        let nuclear = m.clone().svd(false, false).singular_values.iter().sum();
        return (m.clone(), nuclear);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with vectors");
    let vt = svd.v_t.as_ref().expect("svd with vectors");
    let k = svd.singular_values.len();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    let mut nuclear = 0.0;
    for i in 0..k {
        let s = svd.singular_values[i] - mu;
        if s > 0.0 {
            nuclear += s;
            let ui = u.column(i);
            let vi = vt.row(i);
            for c in 0..m.ncols() {
                let sv = s * vi[c];
                for r in 0..m.nrows() {
                    out[(r, c)] += ui[r] * sv;
                }
            }
        }
    }
    (out, nuclear)
}

/// Result of a baseline solve: the minimizing matrix and the objective trace.
#[derive(Debug, Clone)]
pub struct TnhOutcome {
    /// For the reprojection problem this is the `3F x N` shape matrix; for
    /// plain completion it matches the observation shape.
    pub matrix: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
}

impl TnhOutcome {
    pub fn into_shapes(self, frames: usize) -> Result<ShapeSequence> {
        ShapeSequence::new(self.matrix, frames)
    }
}

enum Smooth<'a> {
    Completion(&'a MaskedObservations),
    Reprojection { obs: &'a MaskedObservations, cams: &'a CameraSequence },
}

impl Smooth<'_> {
    fn shape(&self) -> (usize, usize) {
        match self {
            Smooth::Completion(obs) => (obs.nrows(), obs.ncols()),
            Smooth::Reprojection { obs, cams } => (3 * cams.len(), obs.ncols()),
        }
    }

    fn value(&self, s: &DMatrix<f64>) -> f64 {
        match self {
            Smooth::Completion(obs) => obs
                .observed_indices()
                .map(|(i, j)| (obs.values()[(i, j)] - s[(i, j)]).powi(2))
                .sum(),
            Smooth::Reprojection { obs, cams } => {
                let mut total = 0.0;
                for f in 0..cams.len() {
                    let r = cams.projection(f);
                    for p in 0..obs.ncols() {
                        if obs.mask()[(2 * f, p)] {
                            let pt = nalgebra::Vector3::new(
                                s[(3 * f, p)],
                                s[(3 * f + 1, p)],
                                s[(3 * f + 2, p)],
                            );
                            let proj = r * pt;
                            total += (obs.values()[(2 * f, p)] - proj.x).powi(2)
                                + (obs.values()[(2 * f + 1, p)] - proj.y).powi(2);
                        }
                    }
                }
                total
            }
        }
    }

    fn gradient(&self, s: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        match self {
            Smooth::Completion(obs) => {
                for (i, j) in obs.observed_indices() {
                    out[(i, j)] = 2.0 * (s[(i, j)] - obs.values()[(i, j)]);
                }
            }
            Smooth::Reprojection { obs, cams } => {
                for f in 0..cams.len() {
                    let r = cams.projection(f);
                    for p in 0..obs.ncols() {
                        if obs.mask()[(2 * f, p)] {
                            let pt = nalgebra::Vector3::new(
                                s[(3 * f, p)],
                                s[(3 * f + 1, p)],
                                s[(3 * f + 2, p)],
                            );
                            let res = r * pt
                                - nalgebra::Vector2::new(
                                    obs.values()[(2 * f, p)],
                                    obs.values()[(2 * f + 1, p)],
                                );
                            let grad = r.transpose() * res * 2.0;
                            for a in 0..3 {
                                out[(3 * f + a, p)] += grad[a];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Applies the (constant) Hessian of the smooth term to `v`.
    fn hessian_apply(&self, v: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        match self {
            Smooth::Completion(obs) => {
                for (i, j) in obs.observed_indices() {
                    out[(i, j)] = 2.0 * v[(i, j)];
                }
            }
            Smooth::Reprojection { obs, cams } => {
                for f in 0..cams.len() {
                    let r = cams.projection(f);
                    let h = r.transpose() * r * 2.0;
                    for p in 0..obs.ncols() {
                        if obs.mask()[(2 * f, p)] {
                            let vp = nalgebra::Vector3::new(
                                v[(3 * f, p)],
                                v[(3 * f + 1, p)],
                                v[(3 * f + 2, p)],
                            );
                            let hv = h * vp;
                            for a in 0..3 {
                                out[(3 * f + a, p)] = hv[a];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Estimates the Lipschitz constant of the smooth gradient by power
/// iteration on the constant Hessian.
fn estimate_lipschitz(smooth: &Smooth, rows: usize, cols: usize) -> f64 {
    let mut state = 0x853c49e6748fea9b_u64;
    let mut v = DMatrix::from_fn(rows, cols, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    });
    let mut hv = DMatrix::zeros(rows, cols);
    let mut lambda = 0.0;
    for _ in 0..40 {
        let norm = v.norm();
        if norm < 1e-300 {
            return 0.0;
        }
        v /= norm;
        smooth.hessian_apply(&v, &mut hv);
        lambda = v.dot(&hv);
        std::mem::swap(&mut v, &mut hv);
    }
    lambda.max(0.0)
}

/// Minimizes `f(S) + tau ||S||_*` by proximal gradient (forward step on the
/// smooth term with step `1/L`, backward step = [`svt`]).
///
/// With `cams` present, `f` is the fixed-camera reprojection loss over a
/// `3F x N` shape matrix; otherwise it is the masked completion loss over a
/// matrix of the observation shape. The objective trace is nonincreasing;
/// ten consecutive increases abort with a numerical-failure error.
pub fn tnh_solve(
    obs: &MaskedObservations,
    cams: Option<&CameraSequence>,
    tau: f64,
    max_iters: usize,
) -> Result<TnhOutcome> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidInput(format!("tau must be finite and > 0, got {tau}")));
    }
    let smooth = match cams {
        Some(c) => {
            if obs.nrows() != 2 * c.len() {
                return Err(Error::ShapeMismatch(format!(
                    "observations have {} rows, cameras cover {} frames",
                    obs.nrows(),
                    c.len()
                )));
            }
            Smooth::Reprojection { obs, cams: c }
        }
        None => Smooth::Completion(obs),
    };
    let (rows, cols) = smooth.shape();

    // 1.05 head-room over the power-iteration estimate keeps the proximal
    // step in the monotone regime; an unobserved problem has L = 0 and the
    // iteration is pure shrinkage
    let lipschitz = (estimate_lipschitz(&smooth, rows, cols) * 1.05).max(1e-9);
    let step = 1.0 / lipschitz;

    let mut s = DMatrix::zeros(rows, cols);
    let mut grad = DMatrix::zeros(rows, cols);
    let mut trace = Vec::with_capacity(max_iters);
    let mut prev = f64::INFINITY;
    let mut increases = 0usize;
    for _ in 0..max_iters {
        smooth.gradient(&s, &mut grad);
        let y = &s - &grad * step;
        let (s_next, nuclear) = svt_with_trace_norm(&y, tau * step);
        s = s_next;
        let objective = smooth.value(&s) + tau * nuclear;
        if !objective.is_finite() {
            return Err(Error::NumericalFailure("trace-norm solve produced non-finite energy".into()));
        }
        trace.push(objective);
        if objective > prev + 1e-12 * prev.abs().max(1.0) {
            increases += 1;
            if increases >= 10 {
                return Err(Error::NumericalFailure(
                    "trace-norm objective increased for 10 consecutive iterations".into(),
                ));
            }
        } else {
            increases = 0;
        }
        if (prev - objective).abs() <= 1e-10 * prev.abs().max(1.0) {
            break;
        }
        prev = objective;
    }
    Ok(TnhOutcome { matrix: s, objective_trace: trace })
}
