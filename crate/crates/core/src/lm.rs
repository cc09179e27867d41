//! Damped least-squares (Levenberg-Marquardt) minimization of
//! `0.5 * ||r(x)||^2` with a normal-equations linear solve.
//!
//! Problems report their Jacobian in row-sparse form; the solver accumulates
//! `J^T J` densely and factorizes `J^T J + damping * I` by Cholesky. When no
//! Jacobian is provided, forward differences with step `1e-6 * (1 + |x_i|)`
//! stand in.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Configuration for [`lm_minimize`]. All fields must be positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    /// Maximum number of accepted iterations.
    pub max_iters: usize,
    /// Starting value of the additive diagonal damping.
    pub initial_damping: f64,
    /// Factor applied to the damping after a rejected step.
    pub damping_increase: f64,
    /// Factor applied to the damping after an accepted step.
    pub damping_decrease: f64,
    /// Terminate when the step norm drops below `step_tol * (1 + ||x||)`.
    pub step_tol: f64,
    /// Terminate when the relative objective decrease drops below this.
    pub objective_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            initial_damping: 1e-3,
            damping_increase: 10.0,
            damping_decrease: 0.1,
            step_tol: 1e-9,
            objective_tol: 1e-8,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.initial_damping > 0.0
            && self.damping_increase > 1.0
            && self.damping_decrease > 0.0
            && self.damping_decrease < 1.0
            && self.step_tol > 0.0
            && self.objective_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("all LM configuration fields must be positive".into()))
        }
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmTermination {
    StepTolerance,
    ObjectiveTolerance,
    MaxIterations,
    /// The damping grew past its cap without finding an acceptable step.
    Stalled,
}

/// One trial step in the iteration log.
#[derive(Debug, Clone, Copy)]
pub struct LmIteration {
    pub iteration: usize,
    pub objective: f64,
    pub damping: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

/// Result of an LM run: best iterate seen, its objective, and the trial log.
#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: Vec<LmIteration>,
    pub termination: LmTermination,
}

impl LmOutcome {
    /// Objectives of accepted steps, in order. Nonincreasing by construction.
    pub fn accepted_objectives(&self) -> Vec<f64> {
        self.iterations.iter().filter(|it| it.accepted).map(|it| it.objective).collect()
    }
}

/// Jacobian stored as one sparse row per residual.
#[derive(Debug, Clone)]
pub struct RowSparseJacobian {
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl RowSparseJacobian {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, row_ptr: vec![0], cols: Vec::new(), vals: Vec::new() }
    }

    pub fn with_capacity(ncols: usize, rows: usize, nnz: usize) -> Self {
        let mut j = Self::new(ncols);
        j.row_ptr.reserve(rows);
        j.cols.reserve(nnz);
        j.vals.reserve(nnz);
        j
    }

    /// Appends one residual row given parallel column/value slices.
    pub fn push_row(&mut self, cols: &[usize], vals: &[f64]) {
        debug_assert_eq!(cols.len(), vals.len());
        debug_assert!(cols.iter().all(|c| *c < self.ncols));
        self.cols.extend_from_slice(cols);
        self.vals.extend_from_slice(vals);
        self.row_ptr.push(self.cols.len());
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Densifies; intended for tests and finite-difference comparisons.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for row in 0..self.nrows() {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                m[(row, self.cols[k])] += self.vals[k];
            }
        }
        m
    }

    /// Accumulates the normal equations `a = J^T J`, `g = J^T r`.
    fn normal_equations(&self, residuals: &DVector<f64>, a: &mut DMatrix<f64>, g: &mut DVector<f64>) {
        debug_assert_eq!(residuals.len(), self.nrows());
        a.fill(0.0);
        g.fill(0.0);
        let n = self.ncols;
        let a_data = a.as_mut_slice(); // column-major n x n
        for row in 0..self.nrows() {
            let lo = self.row_ptr[row];
            let hi = self.row_ptr[row + 1];
            let r = residuals[row];
            for ia in lo..hi {
                let ca = self.cols[ia];
                let va = self.vals[ia];
                g[ca] += va * r;
                let base = ca * n;
                for ib in lo..hi {
                    a_data[base + self.cols[ib]] += va * self.vals[ib];
                }
            }
        }
    }
}

/// A nonlinear least-squares problem: residual vector `r(x)` of fixed size
/// and, optionally, its row-sparse Jacobian.
pub trait ResidualProblem {
    fn variable_count(&self) -> usize;
    fn residual_count(&self) -> usize;
    fn residuals_into(&self, x: &DVector<f64>, out: &mut DVector<f64>);

    /// Jacobian at `x`; `None` selects the forward-difference fallback.
    fn jacobian(&self, _x: &DVector<f64>) -> Option<RowSparseJacobian> {
        None
    }
}

fn forward_difference_jacobian<P: ResidualProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    base: &DVector<f64>,
) -> RowSparseJacobian {
    let n = problem.variable_count();
    let m = problem.residual_count();
    let mut jac_dense = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    let mut rp = DVector::zeros(m);
    for i in 0..n {
        let h = 1e-6 * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        problem.residuals_into(&xp, &mut rp);
        for r in 0..m {
            jac_dense[(r, i)] = (rp[r] - base[r]) / h;
        }
        xp[i] = x[i];
    }
    let mut jac = RowSparseJacobian::with_capacity(n, m, m * n);
    let cols: Vec<usize> = (0..n).collect();
    let mut vals = vec![0.0; n];
    for r in 0..m {
        for i in 0..n {
            vals[i] = jac_dense[(r, i)];
        }
        jac.push_row(&cols, &vals);
    }
    jac
}

const DAMPING_MIN: f64 = 1e-12;
const DAMPING_MAX: f64 = 1e14;

/// Minimizes `0.5 * ||r(x)||^2` from `x0`.
///
/// The objective over accepted steps is nonincreasing, and the best iterate
/// seen is returned. A non-finite residual at `x0` is an error; non-finite
/// residuals at trial points reject the step and raise the damping.
pub fn lm_minimize<P: ResidualProblem + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    cfg: &LmConfig,
) -> Result<LmOutcome> {
    cfg.validate()?;
    let n = problem.variable_count();
    let m = problem.residual_count();
    if x0.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "starting point has {} entries, problem has {} variables",
            x0.len(),
            n
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidStart("starting point has non-finite entries".into()));
    }

    let mut x = x0.clone();
    let mut r = DVector::zeros(m);
    problem.residuals_into(&x, &mut r);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidStart("residuals are non-finite at the starting point".into()));
    }
    let mut objective = 0.5 * r.norm_squared();

    let mut log = Vec::new();
    let mut damping = cfg.initial_damping;
    let mut a = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    let mut termination = LmTermination::MaxIterations;

    'outer: for iteration in 1..=cfg.max_iters {
        let jac = problem
            .jacobian(&x)
            .unwrap_or_else(|| forward_difference_jacobian(problem, &x, &r));
        jac.normal_equations(&r, &mut a, &mut g);

        let mut r_trial = DVector::zeros(m);
        loop {
            let mut a_damped = a.clone();
            for i in 0..n {
                a_damped[(i, i)] += damping;
            }
            let step = match linalg::solve_spd(&a_damped, &(-&g)) {
                Some(s) => s,
                None => {
                    damping *= cfg.damping_increase;
                    if damping > DAMPING_MAX {
                        termination = LmTermination::Stalled;
                        break 'outer;
                    }
                    continue;
                }
            };
            let step_norm = step.norm();
            if step_norm <= cfg.step_tol * (1.0 + x.norm()) {
                log.push(LmIteration { iteration, objective, damping, step_norm, accepted: false });
                termination = LmTermination::StepTolerance;
                break 'outer;
            }
            let x_trial = &x + &step;
            problem.residuals_into(&x_trial, &mut r_trial);
            let finite = r_trial.iter().all(|v| v.is_finite());
            let objective_trial =
                if finite { 0.5 * r_trial.norm_squared() } else { f64::INFINITY };

            if finite && objective_trial <= objective {
                let decrease = objective - objective_trial;
                x = x_trial;
                std::mem::swap(&mut r, &mut r_trial);
                objective = objective_trial;
                damping = (damping * cfg.damping_decrease).max(DAMPING_MIN);
                log.push(LmIteration {
                    iteration,
                    objective,
                    damping,
                    step_norm,
                    accepted: true,
                });
                if decrease <= cfg.objective_tol * objective.max(f64::MIN_POSITIVE) {
                    termination = LmTermination::ObjectiveTolerance;
                    break 'outer;
                }
                break;
            }

            log.push(LmIteration {
                iteration,
                objective: if finite { objective_trial } else { f64::INFINITY },
                damping,
                step_norm,
                accepted: false,
            });
            damping *= cfg.damping_increase;
            if damping > DAMPING_MAX {
                termination = LmTermination::Stalled;
                break 'outer;
            }
        }
    }

    Ok(LmOutcome { x, objective, iterations: log, termination })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// r(x) = A x - b with a dense analytic Jacobian.
    struct LinearProblem {
        a: DMatrix<f64>,
        b: DVector<f64>,
    }

    impl ResidualProblem for LinearProblem {
        fn variable_count(&self) -> usize {
            self.a.ncols()
        }
        fn residual_count(&self) -> usize {
            self.a.nrows()
        }
        fn residuals_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
            out.copy_from(&(&self.a * x - &self.b));
        }
        fn jacobian(&self, _x: &DVector<f64>) -> Option<RowSparseJacobian> {
            let mut j = RowSparseJacobian::new(self.a.ncols());
            let cols: Vec<usize> = (0..self.a.ncols()).collect();
            for r in 0..self.a.nrows() {
                let vals: Vec<f64> = (0..self.a.ncols()).map(|c| self.a[(r, c)]).collect();
                j.push_row(&cols, &vals);
            }
            Some(j)
        }
    }

    /// Rosenbrock residuals (10(y - x^2), 1 - x); Jacobian left to FD.
    struct Rosenbrock;

    impl ResidualProblem for Rosenbrock {
        fn variable_count(&self) -> usize {
            2
        }
        fn residual_count(&self) -> usize {
            2
        }
        fn residuals_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
            out[0] = 10.0 * (x[1] - x[0] * x[0]);
            out[1] = 1.0 - x[0];
        }
    }

    #[test]
    fn linear_problem_reaches_least_squares_solution() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let b = DVector::from_vec(vec![6.0, 5.0, 7.0, 10.0]);
        let prob = LinearProblem { a: a.clone(), b: b.clone() };
        let out = lm_minimize(&prob, &DVector::zeros(2), &LmConfig::default()).unwrap();
        // normal-equations oracle
        let ata = a.transpose() * &a;
        let atb = a.transpose() * &b;
        let expect = ata.lu().solve(&atb).unwrap();
        assert_relative_eq!(out.x, expect, epsilon = 1e-8);
    }

    #[test]
    fn rosenbrock_converges_to_global_minimum() {
        let cfg = LmConfig { max_iters: 200, ..Default::default() };
        let out = lm_minimize(&Rosenbrock, &DVector::from_vec(vec![-1.2, 1.0]), &cfg).unwrap();
        assert!(out.objective < 1e-12, "objective {}", out.objective);
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(out.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn zero_residual_start_terminates_immediately() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let prob = LinearProblem { a, b: b.clone() };
        let out = lm_minimize(&prob, &b, &LmConfig::default()).unwrap();
        assert_eq!(out.x, b);
        assert!(out.iterations.iter().filter(|it| it.accepted).count() == 0);
        assert!(out.iterations.len() <= 1);
        assert_eq!(out.termination, LmTermination::StepTolerance);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        struct Bad;
        impl ResidualProblem for Bad {
            fn variable_count(&self) -> usize {
                1
            }
            fn residual_count(&self) -> usize {
                1
            }
            fn residuals_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
                out[0] = (x[0] - 2.0).ln(); // NaN for x < 2
            }
        }
        let err = lm_minimize(&Bad, &DVector::from_vec(vec![0.0]), &LmConfig::default());
        assert!(matches!(err, Err(Error::InvalidStart(_))));
    }

    #[test]
    fn accepted_objectives_are_nonincreasing() {
        let cfg = LmConfig { max_iters: 100, ..Default::default() };
        let out = lm_minimize(&Rosenbrock, &DVector::from_vec(vec![3.0, -4.0]), &cfg).unwrap();
        let objs = out.accepted_objectives();
        for w in objs.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn config_validation_rejects_nonpositive() {
        let cfg = LmConfig { step_tol: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
