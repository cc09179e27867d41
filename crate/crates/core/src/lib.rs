//! Solvers for ill-posed inverse problems under a non-linear low-dimensionality
//! prior expressed in a kernel feature space.
//!
//! The central object is the energy
//!
//! ```text
//! f(W, S) + (rho / 2) ||K(S) - C^T C||_F^2 + tau ||C||_*
//! ```
//!
//! where `f` is a problem-specific data term, `K(S)` the Gram matrix of the
//! current estimate, and `C` a feature-space factor whose trace norm
//! penalizes the dimensionality of the manifold the columns of `S` live on.
//! [`pipeline::regularized_solve`] drives the penalty method over `rho`,
//! alternating two sub-solvers:
//!
//! - [`shrink::robust_kpca`]: the globally optimal `C` for fixed `S`, found
//!   in closed form by per-eigenvalue cubic shrinkage;
//! - [`preimage::solve_preimage_step`]: a damped least-squares update of `S`
//!   for fixed `C`.
//!
//! [`problems`] supplies masked matrix completion and non-rigid
//! structure-from-motion data terms together with a linear trace-norm
//! baseline, and [`metrics`] the evaluation criteria used by the
//! experiments.

pub mod error;
pub mod kernel;
mod linalg;
pub mod lm;
pub mod metrics;
pub mod pipeline;
pub mod preimage;
pub mod problems;
pub mod shrink;

pub use error::{Error, Result};
