//! State-space model contracts.
//!
//! Two flavors are supported. [`NoiseDrivenModel`] writes the transition
//! as a map of standard normal noise with an exact linear-plus-residual
//! decomposition; policies act on the noise. [`DensityDrivenModel`] has an
//! explicit transition density and a Gaussian proposal in transformed
//! coordinates; policies act on those coordinates. The wrappers
//! [`NoiseDriven`] and [`DensityDriven`] adapt either flavor to
//! [`ControlledModel`], the interface the particle filters consume.

mod density;
mod noise;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::QuadCoeffs;

pub use density::DensityDriven;
pub use noise::NoiseDriven;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub state: usize,
    /// Standard normal draws per transition.
    pub noise: usize,
    pub obs: usize,
}

/// Model parameters with names for lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    names: Vec<String>,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} parameter names for {} values",
                names.len(),
                values.len()
            )));
        }
        Ok(ParameterVector { names, values })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Transition `s_t = A s_{t-1} + B e_t + c(s_{t-1}, e_t)` with
/// `e_t ~ N(0, I)`, and `s_0 = B e_0 + c_0(e_0)`.
pub trait NoiseDrivenModel: Send + Sync {
    fn dims(&self) -> ModelDims;

    /// `A`, `d x d`.
    fn transition_matrix(&self) -> &DMatrix<f64>;

    /// `B`, `d x d_noise`.
    fn noise_loading(&self) -> &DMatrix<f64>;

    /// `c(s_prev, noise)`, written into `out`.
    fn residual(&self, prev: &[f64], noise: &[f64], out: &mut [f64]);

    /// Residual of the initial map, `c_0(noise)`.
    fn initial_residual(&self, noise: &[f64], out: &mut [f64]);

    /// `log g(y_t | s_{t-1}, s_t)`.
    fn obs_logdensity(&self, t: usize, prev: &[f64], cur: &[f64], y: &[f64]) -> f64;

    fn sample_obs(&self, t: usize, prev: &[f64], cur: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    /// True when the residual is identically zero.
    fn is_linear(&self) -> bool {
        false
    }

    fn transition_map(&self, prev: &[f64], noise: &[f64], out: &mut [f64]) {
        let a = self.transition_matrix();
        let b = self.noise_loading();
        self.residual(prev, noise, out);
        for (i, o) in out.iter_mut().enumerate() {
            let mut lin = 0.0;
            for (j, &s) in prev.iter().enumerate() {
                lin += a[(i, j)] * s;
            }
            let mut shock = 0.0;
            for (k, &e) in noise.iter().enumerate() {
                shock += b[(i, k)] * e;
            }
            *o = lin + shock + *o;
        }
    }

    fn initial_map(&self, noise: &[f64], out: &mut [f64]) {
        let b = self.noise_loading();
        self.initial_residual(noise, out);
        for (i, o) in out.iter_mut().enumerate() {
            let mut shock = 0.0;
            for (k, &e) in noise.iter().enumerate() {
                shock += b[(i, k)] * e;
            }
            *o = shock + *o;
        }
    }
}

/// Gaussian law `N(mean, S S^T)` in the policy coordinates of a
/// density-driven model.
#[derive(Debug, Clone)]
pub struct GaussianProposal {
    pub mean: DVector<f64>,
    /// Square-root factor `S` of the covariance.
    pub sqrt_cov: DMatrix<f64>,
}

/// Model with an explicit transition density `f(s_t | s_{t-1})`, a
/// deterministic initial state and a proposal that is Gaussian in the
/// transformed coordinates `z = l(s)`.
pub trait DensityDrivenModel: Send + Sync {
    /// `noise` is the number of proposal draws per transition (the
    /// dimension of the policy coordinates).
    fn dims(&self) -> ModelDims;

    fn initial_state(&self) -> Vec<f64>;

    /// `log f(cur | prev)` as a density in state coordinates.
    fn transition_logdensity(&self, prev: &[f64], cur: &[f64]) -> f64;

    /// Exact draw from `f(. | prev)`.
    fn sample_transition(&self, prev: &[f64], rng: &mut dyn RngCore, out: &mut [f64]);

    /// Proposal law of `l(s_t)` given `s_{t-1}`.
    fn proposal(&self, prev: &[f64]) -> GaussianProposal;

    /// `log q(cur | prev)` as a density in state coordinates.
    fn proposal_logdensity(&self, prev: &[f64], cur: &[f64]) -> f64;

    /// `z = l(s)`.
    fn to_policy_coords(&self, s: &[f64], z: &mut [f64]);

    /// `s = l^{-1}(z)`.
    fn from_policy_coords(&self, z: &[f64], s: &mut [f64]);

    fn obs_logdensity(&self, t: usize, prev: &[f64], cur: &[f64], y: &[f64]) -> f64;

    fn sample_obs(&self, t: usize, prev: &[f64], cur: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;
}

/// Interface between models and the particle filters.
///
/// Time runs over `t = 0..=T`; `prev` is `None` at `t = 0`. Each particle
/// carries a state and an auxiliary vector (the noise for noise-driven
/// models). Proposals consume `draw_dim(t)` standard normal draws so that
/// controlled and uncontrolled filters read the generator identically.
pub trait ControlledModel: Send + Sync {
    /// Per-time data precomputed from one set of policy coefficients.
    type Step: Send + Sync;

    fn dims(&self) -> ModelDims;

    fn aux_dim(&self) -> usize;

    fn draw_dim(&self, t: usize) -> usize;

    /// Shape `(m, n)` of the policy coefficients at time `t`.
    fn policy_shape(&self, t: usize) -> (usize, usize);

    /// Whether a policy acts at time `t` (false for deterministic steps).
    fn is_controlled(&self, t: usize) -> bool;

    fn prepare(&self, t: usize, coeffs: &QuadCoeffs) -> Result<Self::Step>;

    /// Draws from the uncontrolled proposal.
    fn propagate_base(
        &self,
        t: usize,
        prev: Option<&[f64]>,
        draws: &[f64],
        state: &mut [f64],
        aux: &mut [f64],
    ) -> Result<()>;

    /// Draws from the twisted proposal of `step`.
    fn propagate(
        &self,
        step: &Self::Step,
        prev: Option<&[f64]>,
        draws: &[f64],
        state: &mut [f64],
        aux: &mut [f64],
    ) -> Result<()>;

    /// Log of the expected policy under the uncontrolled proposal,
    /// `log q_t(psi_t | s_{t-1})`, or `log q_0(psi_0)` at `t = 0`.
    fn log_expectation(&self, step: &Self::Step, prev: Option<&[f64]>) -> Result<f64>;

    /// `log psi_t` at one particle.
    fn log_policy(&self, step: &Self::Step, prev: Option<&[f64]>, state: &[f64], aux: &[f64]) -> f64;

    /// Uncontrolled log-weight at inverse temperature `lambda`. `y` is
    /// `None` at `t = 0`.
    fn log_weight(
        &self,
        t: usize,
        prev: Option<&[f64]>,
        state: &[f64],
        y: Option<&[f64]>,
        lambda: f64,
    ) -> f64;

    /// `log g(y_t | s_{t-1}, s_t)`.
    fn log_obs(&self, t: usize, prev: &[f64], state: &[f64], y: &[f64]) -> f64;

    /// Draw from the model's own transition law.
    fn sample_prior(
        &self,
        t: usize,
        prev: Option<&[f64]>,
        rng: &mut dyn RngCore,
        state: &mut [f64],
        aux: &mut [f64],
    ) -> Result<()>;

    fn sample_obs(&self, t: usize, prev: &[f64], state: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    /// Shape `(m, n)` of the regression variables used by policy fitting.
    fn regression_shape(&self, t: usize) -> (usize, usize);

    /// Regression variables `(z, z')` for one support point.
    fn regression_point(
        &self,
        t: usize,
        prev: Option<&[f64]>,
        state: &[f64],
        aux: &[f64],
        z: &mut [f64],
        zp: &mut [f64],
    );

    /// Maps coefficients fitted over the regression variables to policy
    /// coefficients.
    fn lift(&self, t: usize, fitted: &QuadCoeffs) -> Result<QuadCoeffs>;
}

/// One latent path `s_{0:T}` with its auxiliary variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub aux: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// `lambda * log g(y_t | s_{t-1}, s_t)`, zero at `lambda = 0`.
pub fn tempered_obs_logdensity<M: ControlledModel>(
    model: &M,
    t: usize,
    prev: &[f64],
    cur: &[f64],
    y: &[f64],
    lambda: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda = {lambda} outside [0, 1]")));
    }
    if t == 0 {
        return Err(Error::InvalidInput("observations start at t = 1".into()));
    }
    if prev.iter().chain(cur).chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite state or observation at t = {t}")));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    Ok(lambda * model.log_obs(t, prev, cur, y))
}

/// Simulates a latent path and observations `y_{1:T}` from the model.
pub fn simulate<M: ControlledModel, R: Rng>(
    model: &M,
    horizon: usize,
    rng: &mut R,
) -> Result<(Trajectory, Vec<DVector<f64>>)> {
    let dims = model.dims();
    let mut traj = Trajectory { states: Vec::with_capacity(horizon + 1), aux: Vec::new() };
    let mut ys = Vec::with_capacity(horizon);
    for t in 0..=horizon {
        let mut s = vec![0.0; dims.state];
        let mut a = vec![0.0; model.aux_dim()];
        let prev = traj.states.last().map(Vec::as_slice);
        model.sample_prior(t, prev, rng, &mut s, &mut a)?;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("simulation produced a non-finite state at t = {t}")));
        }
        if t > 0 {
            let y = model.sample_obs(t, &traj.states[t - 1], &s, rng);
            ys.push(DVector::from_vec(y));
        }
        traj.states.push(s);
        traj.aux.push(a);
    }
    Ok((traj, ys))
}
