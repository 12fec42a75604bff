//! Annealed controlled sequential Monte Carlo for state-space models.
//!
//! The crate provides bootstrap and controlled particle filters with
//! log-quadratic twisting policies, approximate dynamic programming for
//! learning those policies, annealing over inverse temperatures, and an
//! adaptive SMC^2 sampler for parameter inference. Built-in models cover
//! linear-Gaussian, quadratic-perturbation and autoregressive-gamma
//! long-run-risk dynamics, and exact Kalman oracles are available for the
//! linear case.

pub mod adp;
pub mod annealing;
pub mod error;
pub mod kalman;
pub mod linalg;
pub mod model;
pub mod models;
pub mod numeric;
pub mod parallel;
pub mod policy;
pub mod rng;
pub mod smc;
pub mod smc2;

pub use error::{Error, Result};
