//! Simulation and statistical-inference toolkit for 2-type Galton-Watson
//! branching processes with immigration.
//!
//! The crate simulates trajectories of the branching recursion, computes
//! conditional least squares (CLS) estimators of the offspring mean matrix
//! and of the criticality parameter (the spectral radius), samples the
//! associated limit distributions by Euler-Maruyama discretization of the
//! limit SDE system, and runs Monte Carlo campaigns comparing finite-sample
//! statistics against their limits.
//!
//! Modules:
//! - [`model`]: exact 2x2 spectral algebra (eigenvalues, Perron vectors,
//!   Putzer powers, criticality classification, tensor utilities).
//! - [`laws`]: finite-support laws on Z_+^2 with exact moments, model
//!   presets, variance objects and degeneracy diagnostics.
//! - [`simulate`]: seeded trajectory simulation, martingale differences,
//!   U/V decomposition.
//! - [`estimate`]: CLS normal equations, estimators, decomposition
//!   identities, subcritical asymptotic covariance.
//! - [`limit`]: limit SDE discretization and the limit-distribution
//!   functionals.
//! - [`mcharness`]: parallel Monte Carlo campaigns and empirical
//!   distribution comparison.
//! - [`cli`]: command-line front end (JSON configs, CSV/JSON outputs).

pub mod cli;
pub mod error;
pub mod estimate;
pub mod laws;
pub mod limit;
pub mod mcharness;
pub mod model;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
