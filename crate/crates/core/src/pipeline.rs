//! Penalty-method driver alternating the closed-form basis update with the
//! data-matrix update while escalating the penalty weight.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::kernel::{kernel_matrix, DataMatrix, KernelModel};
use crate::lm::LmConfig;
use crate::preimage::{solve_preimage_step, LossFunction};
use crate::shrink::{robust_kpca, FeatureBasis, ShrinkageParams};

/// Escalation schedule for the penalty weight: stages run at
/// `rho0, rho0 * rho_scale, ...` while the weight stays `<= rho_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySchedule {
    rho0: f64,
    rho_max: f64,
    rho_scale: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self { rho0: 1.0, rho_max: 1e4, rho_scale: 10.0 }
    }
}

impl PenaltySchedule {
    pub fn new(rho0: f64, rho_max: f64, rho_scale: f64) -> Result<Self> {
        if !(rho0 > 0.0) || !(rho_scale > 1.0) || !(rho_max >= rho0) {
            return Err(Error::InvalidInput(format!(
                "penalty schedule needs rho0 > 0, rho_scale > 1, rho_max >= rho0; \
                 got rho0={rho0}, rho_max={rho_max}, rho_scale={rho_scale}"
            )));
        }
        Ok(Self { rho0, rho_max, rho_scale })
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    pub fn rho_scale(&self) -> f64 {
        self.rho_scale
    }

    /// The stage weights, in order.
    pub fn stages(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut rho = self.rho0;
        while rho <= self.rho_max * (1.0 + 1e-12) {
            out.push(rho);
            rho *= self.rho_scale;
        }
        out
    }
}

/// Energy trace and constraint residual for one fixed-penalty stage.
#[derive(Debug, Clone)]
pub struct StageTrace {
    pub rho: f64,
    /// Energy after every inner (basis + data) iteration.
    pub energies: Vec<f64>,
    /// `||K(S) - C^T C||_F` at the end of the stage.
    pub constraint_residual: f64,
}

/// Full record of a penalty-method solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub stages: Vec<StageTrace>,
    pub data: DataMatrix,
    pub basis: FeatureBasis,
    pub final_energy: f64,
    pub wall_time: std::time::Duration,
}

impl SolveReport {
    pub fn constraint_residuals(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.constraint_residual).collect()
    }
}

/// The joint energy
/// `f(W, S) + (rho / 2) ||K(S) - C^T C||_F^2 + tau ||C||_*`,
/// with the trace norm read off the feature-basis spectrum.
pub fn energy(
    loss: &dyn LossFunction,
    s: &DataMatrix,
    basis: &FeatureBasis,
    kernel: &KernelModel,
    tau: f64,
    rho: f64,
) -> Result<f64> {
    let (d, n) = loss.data_shape();
    if s.dim() != d || s.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "data matrix is {}x{}, loss expects {}x{}",
            s.dim(),
            s.len(),
            d,
            n
        )));
    }
    if basis.basis().nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "feature basis covers {} samples, data has {}",
            basis.basis().nrows(),
            n
        )));
    }
    let f = loss.value(s.matrix());
    let k = kernel_matrix(s, kernel);
    let penalty = (k - basis.ctc()).norm_squared() * rho / 2.0;
    Ok(f + penalty + tau * basis.trace_norm())
}

/// Penalty-method alternation: for each stage weight, repeat
/// (closed-form basis update, LM data update) until the relative energy
/// decrease drops below `inner_tol` or `max_inner` iterations, then escalate.
/// The previous iterate warm-starts every stage. Energy is nonincreasing
/// within each stage.
pub fn regularized_solve(
    loss: &dyn LossFunction,
    s0: &DataMatrix,
    kernel: &KernelModel,
    tau: f64,
    schedule: &PenaltySchedule,
    inner_tol: f64,
    max_inner: usize,
    cfg: &LmConfig,
) -> Result<SolveReport> {
    if !(inner_tol > 0.0) || max_inner == 0 {
        return Err(Error::InvalidInput(
            "inner tolerance must be positive and max_inner at least 1".into(),
        ));
    }
    let start = Instant::now();
    let mut s = s0.clone();
    let mut stages = Vec::new();
    let mut last: Option<(FeatureBasis, f64)> = None;

    for rho in schedule.stages() {
        let params = ShrinkageParams::new(tau, rho)?;
        let mut energies = Vec::new();
        let mut prev_energy = f64::INFINITY;
        let mut basis_now: Option<FeatureBasis> = None;
        for _ in 0..max_inner {
            let k = kernel_matrix(&s, kernel);
            let (basis, _) = robust_kpca(&k, &params)?;
            let (s_next, _) = solve_preimage_step(loss, &basis, &s, kernel, rho, cfg)?;
            s = s_next;
            let e = energy(loss, &s, &basis, kernel, tau, rho)?;
            if !e.is_finite() {
                return Err(Error::NumericalFailure(format!(
                    "energy became non-finite at rho = {rho}"
                )));
            }
            energies.push(e);
            basis_now = Some(basis);
            if prev_energy.is_finite() && (prev_energy - e) < inner_tol * prev_energy.abs().max(1e-12)
            {
                break;
            }
            prev_energy = e;
        }
        let basis = basis_now.expect("at least one inner iteration");
        let k = kernel_matrix(&s, kernel);
        let constraint_residual = (k - basis.ctc()).norm();
        let final_energy = *energies.last().expect("nonempty");
        stages.push(StageTrace { rho, energies, constraint_residual });
        last = Some((basis, final_energy));
    }

    let (basis, final_energy) = last.expect("schedule has at least one stage");
    Ok(SolveReport { stages, data: s, basis, final_energy, wall_time: start.elapsed() })
}
