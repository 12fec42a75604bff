use rand::RngCore;

use super::{ControlledModel, DensityDrivenModel, ModelDims};
use crate::error::{Error, Result};
use crate::policy::{affine_draw, GaussianTwist, QuadCoeffs};

/// Adapts a [`DensityDrivenModel`] to [`ControlledModel`]. Policies act on
/// `(l(s_{t-1}), l(s_t))`; the initial state is deterministic, so no
/// policy acts at `t = 0`.
#[derive(Debug, Clone)]
pub struct DensityDriven<M>(pub M);

pub struct DensityStep {
    t: usize,
    coeffs: QuadCoeffs,
}

impl<M: DensityDrivenModel> DensityDriven<M> {
    pub fn inner(&self) -> &M {
        &self.0
    }

    fn coords(&self, s: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.0.dims().noise];
        self.0.to_policy_coords(s, &mut z);
        z
    }

    fn twist_at(&self, step: &DensityStep, prev: &[f64]) -> Result<(GaussianTwist, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let prop = self.0.proposal(prev);
        let zprev = self.coords(prev);
        let twist = GaussianTwist::new(Some(&prop.sqrt_cov), &step.coeffs.a).map_err(|_| {
            Error::PolicyInvariant { t: step.t, reason: "proposal precision + 2A is not positive definite".into() }
        })?;
        let mut u = step.coeffs.b.as_slice().to_vec();
        for (i, ui) in u.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &zj) in zprev.iter().enumerate() {
                acc += step.coeffs.c[(i, j)] * zj;
            }
            *ui += acc;
        }
        Ok((twist, prop.mean.as_slice().to_vec(), u, zprev))
    }
}

fn require_prev(t: usize, prev: Option<&[f64]>) -> Result<&[f64]> {
    prev.ok_or_else(|| Error::InvalidInput(format!("missing previous state at t = {t}")))
}

impl<M: DensityDrivenModel> ControlledModel for DensityDriven<M> {
    type Step = DensityStep;

    fn dims(&self) -> ModelDims {
        self.0.dims()
    }

    fn aux_dim(&self) -> usize {
        0
    }

    fn draw_dim(&self, t: usize) -> usize {
        if t == 0 {
            0
        } else {
            self.0.dims().noise
        }
    }

    fn policy_shape(&self, t: usize) -> (usize, usize) {
        let p = self.0.dims().noise;
        if t == 0 {
            (0, 0)
        } else {
            (p, p)
        }
    }

    fn is_controlled(&self, t: usize) -> bool {
        t > 0
    }

    fn prepare(&self, t: usize, coeffs: &QuadCoeffs) -> Result<DensityStep> {
        if coeffs.shape() != self.policy_shape(t) {
            return Err(Error::Dimension(format!(
                "policy at t = {t} has shape {:?}, expected {:?}",
                coeffs.shape(),
                self.policy_shape(t)
            )));
        }
        Ok(DensityStep { t, coeffs: coeffs.clone() })
    }

    fn propagate_base(
        &self,
        t: usize,
        prev: Option<&[f64]>,
        draws: &[f64],
        state: &mut [f64],
        _aux: &mut [f64],
    ) -> Result<()> {
        if t == 0 {
            state.copy_from_slice(&self.0.initial_state());
            return Ok(());
        }
        let prop = self.0.proposal(require_prev(t, prev)?);
        let mut z = vec![0.0; draws.len()];
        affine_draw(prop.mean.as_slice(), &prop.sqrt_cov, draws, &mut z);
        self.0.from_policy_coords(&z, state);
        Ok(())
    }

    fn propagate(
        &self,
        step: &DensityStep,
        prev: Option<&[f64]>,
        draws: &[f64],
        state: &mut [f64],
        _aux: &mut [f64],
    ) -> Result<()> {
        if step.t == 0 {
            state.copy_from_slice(&self.0.initial_state());
            return Ok(());
        }
        let (twist, eta, u, _) = self.twist_at(step, require_prev(step.t, prev)?)?;
        let mut mean = vec![0.0; eta.len()];
        twist.mean(&eta, &step.coeffs.a, &u, &mut mean);
        let mut z = vec![0.0; eta.len()];
        twist.sample(&mean, draws, &mut z);
        self.0.from_policy_coords(&z, state);
        Ok(())
    }

    fn log_expectation(&self, step: &DensityStep, prev: Option<&[f64]>) -> Result<f64> {
        if step.t == 0 {
            return Ok(-step.coeffs.f);
        }
        let (twist, eta, u, zprev) = self.twist_at(step, require_prev(step.t, prev)?)?;
        Ok(twist.log_normalizer(&eta, &step.coeffs.a, &u) - step.coeffs.q(&zprev, &[]))
    }

    fn log_policy(&self, step: &DensityStep, prev: Option<&[f64]>, state: &[f64], _aux: &[f64]) -> f64 {
        match prev {
            Some(p) if step.t > 0 => step.coeffs.log_policy(&self.coords(p), &self.coords(state)),
            _ => -step.coeffs.f,
        }
    }

    fn log_weight(
        &self,
        t: usize,
        prev: Option<&[f64]>,
        state: &[f64],
        y: Option<&[f64]>,
        lambda: f64,
    ) -> f64 {
        let (Some(p), Some(y)) = (prev, y) else { return 0.0 };
        if t == 0 {
            return 0.0;
        }
        let obs = if lambda == 0.0 { 0.0 } else { lambda * self.0.obs_logdensity(t, p, state, y) };
        self.0.transition_logdensity(p, state) + obs - self.0.proposal_logdensity(p, state)
    }

    fn log_obs(&self, t: usize, prev: &[f64], state: &[f64], y: &[f64]) -> f64 {
        self.0.obs_logdensity(t, prev, state, y)
    }

    fn sample_prior(
        &self,
        t: usize,
        prev: Option<&[f64]>,
        rng: &mut dyn RngCore,
        state: &mut [f64],
        _aux: &mut [f64],
    ) -> Result<()> {
        if t == 0 {
            state.copy_from_slice(&self.0.initial_state());
        } else {
            self.0.sample_transition(require_prev(t, prev)?, rng, state);
        }
        Ok(())
    }

    fn sample_obs(&self, t: usize, prev: &[f64], state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        self.0.sample_obs(t, prev, state, rng)
    }

    fn regression_shape(&self, t: usize) -> (usize, usize) {
        self.policy_shape(t)
    }

    fn regression_point(
        &self,
        t: usize,
        prev: Option<&[f64]>,
        state: &[f64],
        _aux: &[f64],
        z: &mut [f64],
        zp: &mut [f64],
    ) {
        if t == 0 {
            return;
        }
        if let Some(p) = prev {
            self.0.to_policy_coords(p, z);
        }
        self.0.to_policy_coords(state, zp);
    }

    fn lift(&self, _t: usize, fitted: &QuadCoeffs) -> Result<QuadCoeffs> {
        Ok(fitted.clone())
    }
}
