use rand::RngCore;

use super::gaussian_obs::GaussianObs;
use crate::error::Result;
use crate::kalman::LinearGaussianSpec;
use crate::model::{ModelDims, NoiseDriven, NoiseDrivenModel};

use nalgebra::DMatrix;

/// Linear-Gaussian state-space model.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    spec: LinearGaussianSpec,
    obs: GaussianObs,
}

impl LinearGaussianModel {
    pub fn new(spec: LinearGaussianSpec) -> Result<Self> {
        spec.validate()?;
        let obs = GaussianObs::new(&spec.d, &spec.e, &spec.f)?;
        Ok(LinearGaussianModel { spec, obs })
    }

    pub fn spec(&self) -> &LinearGaussianSpec {
        &self.spec
    }
}

/// Builds the linear-Gaussian model ready for the filters.
pub fn lgssm(spec: LinearGaussianSpec) -> Result<NoiseDriven<LinearGaussianModel>> {
    Ok(NoiseDriven(LinearGaussianModel::new(spec)?))
}

impl NoiseDrivenModel for LinearGaussianModel {
    fn dims(&self) -> ModelDims {
        ModelDims { state: self.spec.state_dim(), noise: self.spec.noise_dim(), obs: self.spec.obs_dim() }
    }

    fn transition_matrix(&self) -> &DMatrix<f64> {
        &self.spec.a
    }

    fn noise_loading(&self) -> &DMatrix<f64> {
        &self.spec.b
    }

    fn residual(&self, _prev: &[f64], _noise: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn initial_residual(&self, _noise: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn obs_logdensity(&self, _t: usize, _prev: &[f64], cur: &[f64], y: &[f64]) -> f64 {
        self.obs.logdensity(cur, y)
    }

    fn sample_obs(&self, _t: usize, _prev: &[f64], cur: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        self.obs.sample(cur, rng)
    }

    fn is_linear(&self) -> bool {
        true
    }
}
