use nalgebra::DMatrix;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{ControlledModel, ModelDims, NoiseDrivenModel};
use crate::error::{Error, Result};
use crate::policy::{dim_reduce_lift, GaussianTwist, QuadCoeffs};

/// Adapts a [`NoiseDrivenModel`] to [`ControlledModel`]. Policies act on
/// `(s_{t-1}, e_t)`, and on `e_0` alone at the initial time.
#[derive(Debug, Clone)]
pub struct NoiseDriven<M>(pub M);

pub struct NoiseStep {
    t: usize,
    coeffs: QuadCoeffs,
    twist: GaussianTwist,
    zeros: Vec<f64>,
}

impl NoiseStep {
    fn shift(&self, prev: Option<&[f64]>) -> Vec<f64> {
        let mut u = self.coeffs.b.as_slice().to_vec();
        if let Some(p) = prev {
            for (i, ui) in u.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, &pj) in p.iter().enumerate() {
                    acc += self.coeffs.c[(i, j)] * pj;
                }
                *ui += acc;
            }
        }
        u
    }
}

impl<M: NoiseDrivenModel> NoiseDriven<M> {
    pub fn inner(&self) -> &M {
        &self.0
    }
}

fn prev_or_empty(prev: Option<&[f64]>) -> &[f64] {
    prev.unwrap_or(&[])
}

impl<M: NoiseDrivenModel> ControlledModel for NoiseDriven<M> {
    type Step = NoiseStep;

    fn dims(&self) -> ModelDims {
        self.0.dims()
    }

    fn aux_dim(&self) -> usize {
        self.0.dims().noise
    }

    fn draw_dim(&self, _t: usize) -> usize {
        self.0.dims().noise
    }

    fn policy_shape(&self, t: usize) -> (usize, usize) {
        let dims = self.0.dims();
        (dims.noise, if t == 0 { 0 } else { dims.state })
    }

    fn is_controlled(&self, _t: usize) -> bool {
        true
    }

    fn prepare(&self, t: usize, coeffs: &QuadCoeffs) -> Result<NoiseStep> {
        if coeffs.shape() != self.policy_shape(t) {
            return Err(Error::Dimension(format!(
                "policy at t = {t} has shape {:?}, expected {:?}",
                coeffs.shape(),
                self.policy_shape(t)
            )));
        }
        let twist = GaussianTwist::new(None, &coeffs.a).map_err(|_| Error::PolicyInvariant {
            t,
            reason: "I + 2A is not positive definite".into(),
        })?;
        Ok(NoiseStep { t, coeffs: coeffs.clone(), twist, zeros: vec![0.0; coeffs.shape().0] })
    }

    fn propagate_base(
        &self,
        t: usize,
        prev: Option<&[f64]>,
        draws: &[f64],
        state: &mut [f64],
        aux: &mut [f64],
    ) -> Result<()> {
        aux.copy_from_slice(draws);
        match (t, prev) {
            (0, _) => self.0.initial_map(aux, state),
            (_, Some(p)) => self.0.transition_map(p, aux, state),
            (_, None) => return Err(Error::InvalidInput(format!("missing previous state at t = {t}"))),
        }
        Ok(())
    }

    fn propagate(
        &self,
        step: &NoiseStep,
        prev: Option<&[f64]>,
        draws: &[f64],
        state: &mut [f64],
        aux: &mut [f64],
    ) -> Result<()> {
        let u = step.shift(if step.t == 0 { None } else { prev });
        let mut mean = vec![0.0; u.len()];
        step.twist.mean(&step.zeros, &step.coeffs.a, &u, &mut mean);
        step.twist.sample(&mean, draws, aux);
        match (step.t, prev) {
            (0, _) => self.0.initial_map(aux, state),
            (_, Some(p)) => self.0.transition_map(p, aux, state),
            (t, None) => return Err(Error::InvalidInput(format!("missing previous state at t = {t}"))),
        }
        Ok(())
    }

    fn log_expectation(&self, step: &NoiseStep, prev: Option<&[f64]>) -> Result<f64> {
        let prev = if step.t == 0 { None } else { prev };
        let u = step.shift(prev);
        let own = step.coeffs.q(prev_or_empty(prev), &[]);
        Ok(step.twist.log_normalizer(&step.zeros, &step.coeffs.a, &u) - own)
    }

    fn log_policy(&self, step: &NoiseStep, prev: Option<&[f64]>, _state: &[f64], aux: &[f64]) -> f64 {
        let z = if step.t == 0 { &[][..] } else { prev_or_empty(prev) };
        step.coeffs.log_policy(z, aux)
    }

    fn log_weight(
        &self,
        t: usize,
        prev: Option<&[f64]>,
        state: &[f64],
        y: Option<&[f64]>,
        lambda: f64,
    ) -> f64 {
        match (prev, y) {
            (Some(p), Some(y)) if t > 0 && lambda != 0.0 => lambda * self.0.obs_logdensity(t, p, state, y),
            _ => 0.0,
        }
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
        aux: &mut [f64],
    ) -> Result<()> {
        let draws: Vec<f64> = (0..aux.len()).map(|_| StandardNormal.sample(rng)).collect();
        self.propagate_base(t, prev, &draws, state, aux)
    }

    fn sample_obs(&self, t: usize, prev: &[f64], state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        self.0.sample_obs(t, prev, state, rng)
    }

    fn regression_shape(&self, _t: usize) -> (usize, usize) {
        (self.0.dims().state, 0)
    }

    fn regression_point(
        &self,
        t: usize,
        prev: Option<&[f64]>,
        _state: &[f64],
        aux: &[f64],
        _z: &mut [f64],
        zp: &mut [f64],
    ) {
        let a = self.0.transition_matrix();
        let b = self.0.noise_loading();
        for (i, out) in zp.iter_mut().enumerate() {
            let mut acc = 0.0;
            if t > 0 {
                if let Some(p) = prev {
                    for (j, &pj) in p.iter().enumerate() {
                        acc += a[(i, j)] * pj;
                    }
                }
            }
            for (k, &ek) in aux.iter().enumerate() {
                acc += b[(i, k)] * ek;
            }
            *out = acc;
        }
    }

    fn lift(&self, t: usize, fitted: &QuadCoeffs) -> Result<QuadCoeffs> {
        let b = self.0.noise_loading();
        if t == 0 {
            dim_reduce_lift(fitted, &DMatrix::zeros(b.nrows(), 0), b)
        } else {
            dim_reduce_lift(fitted, self.0.transition_matrix(), b)
        }
    }
}
