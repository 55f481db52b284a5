//! Discrete maximal-monotone solver for the damped complex Ginzburg-Landau
//! equation
//!
//! ```text
//! e^{-iθ} u_t - Δu + a|u|^{-(1-m)}u + b|u|^{p-1}u + γu = f   on a box, u = 0 on the boundary
//! ```
//!
//! with singular (`0 < m < 1`) or saturated (`m = 0`) damping and a truncated
//! superlinear absorption. The crate is organised bottom-up:
//!
//! - [`params`]: coefficients and the admissible cones `C_θ(q)`.
//! - [`kernels`]: the pointwise nonlinearities `g_ε^m`, `h_M^p`, their
//!   Jacobians and the pointwise monotonicity / sector defects.
//! - [`grid`]: box discretisation, Dirichlet Laplacian, edge gradients,
//!   inner products and the snapshot file format.
//! - [`operator`]: the evolution operator `A = L + B`, its resolvent
//!   `(I + λA)^{-1}` and ε-continuation.
//! - [`timestepper`]: backward-Euler trajectories and paired runs.
//! - [`diagnostics`]: energy ledgers and certificates for every estimate.
//! - [`oracle`]: independent reference solutions.
//! - [`config`], [`cli`], [`suites`]: batch front end.

pub mod cli;
pub mod config;
pub mod diagnostics;
mod error;
pub mod grid;
pub mod kernels;
mod linalg;
pub mod operator;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod suites;
pub mod timestepper;

pub use error::{Error, NoConvergence, Result};
pub use num_complex::Complex64;
