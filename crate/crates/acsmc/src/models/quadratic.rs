use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::gaussian_obs::GaussianObs;
use super::lgssm::LinearGaussianModel;
use crate::error::{Error, Result};
use crate::kalman::LinearGaussianSpec;
use crate::linalg;
use crate::model::{ModelDims, NoiseDriven, NoiseDrivenModel};

/// Second-order state-space model with pruning. The state splits into
/// `s = (x, z)` with
///
/// `x_t = c + L (x_{t-1}, z_t) + Q(x_{t-1}, z_t)`, `Q(s)_i = s^T Q_i s`,
/// `z_t = rho z_{t-1} + Sigma e_t`,
///
/// and `x_0 = c + L (0, z_0) + Q(0, z_0)`, `z_0 = Sigma e_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSsmSpec {
    #[serde(with = "linalg::vector")]
    pub c: DVector<f64>,
    /// `L = (L_1 L_2)`, `d_x x d`.
    #[serde(with = "linalg::rows")]
    pub l: DMatrix<f64>,
    /// One `d x d` matrix per endogenous variable.
    #[serde(with = "linalg::rows_list")]
    pub q: Vec<DMatrix<f64>>,
    #[serde(with = "linalg::rows")]
    pub rho: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub sigma: DMatrix<f64>,
    #[serde(with = "linalg::vector")]
    pub obs_offset: DVector<f64>,
    #[serde(with = "linalg::rows")]
    pub obs_loading: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub obs_cov: DMatrix<f64>,
}

impl QuadraticSsmSpec {
    pub fn endogenous_dim(&self) -> usize {
        self.c.len()
    }

    pub fn exogenous_dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let dx = self.c.len();
        let dz = self.rho.nrows();
        let d = dx + dz;
        let dy = self.obs_offset.len();
        let ok = dx > 0
            && dz > 0
            && dy > 0
            && self.l.shape() == (dx, d)
            && self.q.len() == dx
            && self.q.iter().all(|q| q.shape() == (d, d))
            && self.rho.shape() == (dz, dz)
            && self.sigma.shape() == (dz, dz)
            && self.obs_loading.shape() == (dy, d)
            && self.obs_cov.shape() == (dy, dy);
        if !ok {
            return Err(Error::Dimension(format!(
                "quadratic spec: c {dx}, L {:?}, {} Q matrices, rho {:?}, Sigma {:?}, obs loading {:?}, obs cov {:?}",
                self.l.shape(),
                self.q.len(),
                self.rho.shape(),
                self.sigma.shape(),
                self.obs_loading.shape(),
                self.obs_cov.shape()
            )));
        }
        let all = self.c.iter().chain(self.l.iter()).chain(self.q.iter().flat_map(|q| q.iter()));
        if all.chain(self.rho.iter()).chain(self.sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("quadratic spec has non-finite entries".into()));
        }
        Ok(())
    }

    /// Assembles `A = [[L_1, L_2 rho], [0, rho]]` and `B = [[L_2 Sigma], [Sigma]]`.
    pub fn linear_part(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let dx = self.endogenous_dim();
        let dz = self.exogenous_dim();
        let d = dx + dz;
        let l1 = self.l.columns(0, dx).into_owned();
        let l2 = self.l.columns(dx, dz).into_owned();
        let mut a = DMatrix::zeros(d, d);
        a.view_mut((0, 0), (dx, dx)).copy_from(&l1);
        a.view_mut((0, dx), (dx, dz)).copy_from(&linalg::matmul(&l2, &self.rho));
        a.view_mut((dx, dx), (dz, dz)).copy_from(&self.rho);
        let mut b = DMatrix::zeros(d, dz);
        b.view_mut((0, 0), (dx, dz)).copy_from(&linalg::matmul(&l2, &self.sigma));
        b.view_mut((dx, 0), (dz, dz)).copy_from(&self.sigma);
        (a, b)
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticSsmModel {
    spec: QuadraticSsmSpec,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    obs: GaussianObs,
}

impl QuadraticSsmModel {
    pub fn spec(&self) -> &QuadraticSsmSpec {
        &self.spec
    }

    /// `c + Q(x_prev, z)` written into the endogenous rows of `out`.
    fn endogenous_residual(&self, x_prev: Option<&[f64]>, z: &[f64], out: &mut [f64]) {
        let dx = self.spec.endogenous_dim();
        let mut v = vec![0.0; dx + z.len()];
        if let Some(x) = x_prev {
            v[..dx].copy_from_slice(&x[..dx]);
        }
        v[dx..].copy_from_slice(z);
        for i in 0..dx {
            out[i] = self.spec.c[i] + linalg::quad_form(&self.spec.q[i], &v);
        }
        out[dx..].fill(0.0);
    }

    fn exogenous_next(&self, z_prev: Option<&[f64]>, noise: &[f64]) -> Vec<f64> {
        let dz = self.spec.exogenous_dim();
        (0..dz)
            .map(|i| {
                let mut acc = 0.0;
                if let Some(zp) = z_prev {
                    for (j, &v) in zp.iter().enumerate() {
                        acc += self.spec.rho[(i, j)] * v;
                    }
                }
                for (k, &e) in noise.iter().enumerate() {
                    acc += self.spec.sigma[(i, k)] * e;
                }
                acc
            })
            .collect()
    }
}

/// The nonlinear model with its pruned quadratic correction.
pub fn build_quadratic_ssm(spec: QuadraticSsmSpec) -> Result<NoiseDriven<QuadraticSsmModel>> {
    spec.validate()?;
    let (a, b) = spec.linear_part();
    let obs = GaussianObs::new(&spec.obs_offset, &spec.obs_loading, &spec.obs_cov)?;
    Ok(NoiseDriven(QuadraticSsmModel { spec, a, b, obs }))
}

/// The linearized model obtained by dropping the constant and quadratic
/// terms.
pub fn build_lgssm(spec: &QuadraticSsmSpec) -> Result<NoiseDriven<LinearGaussianModel>> {
    spec.validate()?;
    let (a, b) = spec.linear_part();
    let linear = LinearGaussianSpec::new(
        a,
        b,
        spec.obs_offset.clone(),
        spec.obs_loading.clone(),
        spec.obs_cov.clone(),
    )?;
    Ok(NoiseDriven(LinearGaussianModel::new(linear)?))
}

impl NoiseDrivenModel for QuadraticSsmModel {
    fn dims(&self) -> ModelDims {
        ModelDims { state: self.a.nrows(), noise: self.b.ncols(), obs: self.spec.obs_offset.len() }
    }

    fn transition_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    fn noise_loading(&self) -> &DMatrix<f64> {
        &self.b
    }

    fn residual(&self, prev: &[f64], noise: &[f64], out: &mut [f64]) {
        let dx = self.spec.endogenous_dim();
        let z = self.exogenous_next(Some(&prev[dx..]), noise);
        self.endogenous_residual(Some(prev), &z, out);
    }

    fn initial_residual(&self, noise: &[f64], out: &mut [f64]) {
        let z = self.exogenous_next(None, noise);
        self.endogenous_residual(None, &z, out);
    }

    fn obs_logdensity(&self, _t: usize, _prev: &[f64], cur: &[f64], y: &[f64]) -> f64 {
        self.obs.logdensity(cur, y)
    }

    fn sample_obs(&self, _t: usize, _prev: &[f64], cur: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        self.obs.sample(cur, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_spec(q: f64, cross: f64) -> QuadraticSsmSpec {
        QuadraticSsmSpec {
            c: DVector::from_vec(vec![0.0]),
            l: DMatrix::from_row_slice(1, 2, &[0.5, 1.0]),
            q: vec![DMatrix::from_row_slice(2, 2, &[q, cross, cross, 0.0])],
            rho: DMatrix::from_element(1, 1, 0.8),
            sigma: DMatrix::from_element(1, 1, 0.3),
            obs_offset: DVector::from_vec(vec![0.0]),
            obs_loading: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            obs_cov: DMatrix::from_element(1, 1, 0.1),
        }
    }

    #[test]
    fn block_assembly_by_hand() {
        let spec = QuadraticSsmSpec {
            c: DVector::from_vec(vec![0.0, 0.0]),
            l: DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]),
            q: vec![DMatrix::zeros(4, 4), DMatrix::zeros(4, 4)],
            rho: DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.9]),
            sigma: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.2, 2.0]),
            obs_offset: DVector::from_vec(vec![0.0]),
            obs_loading: DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]),
            obs_cov: DMatrix::from_element(1, 1, 1.0),
        };
        let (a, b) = spec.linear_part();
        // L_2 rho = [[3*0.5, 3*0.1 + 4*0.9], [7*0.5, 7*0.1 + 8*0.9]]
        let expect_a = DMatrix::from_row_slice(
            4,
            4,
            &[1.0, 2.0, 1.5, 3.9, 5.0, 6.0, 3.5, 7.9, 0.0, 0.0, 0.5, 0.1, 0.0, 0.0, 0.0, 0.9],
        );
        // L_2 Sigma = [[3 + 0.8, 8], [7 + 1.6, 16]]
        let expect_b =
            DMatrix::from_row_slice(4, 2, &[3.8, 8.0, 8.6, 16.0, 1.0, 0.0, 0.2, 2.0]);
        assert!((a - expect_a).abs().max() < 1e-14);
        assert!((b - expect_b).abs().max() < 1e-14);
    }

    #[test]
    fn cross_term_is_twice_product() {
        let model = build_quadratic_ssm(scalar_spec(0.0, 1.0)).unwrap();
        let prev = [0.7, -0.4];
        let noise = [1.3];
        let z = 0.8 * -0.4 + 0.3 * 1.3;
        let mut out = [0.0; 2];
        model.0.residual(&prev, &noise, &mut out);
        assert!((out[0] - 2.0 * 0.7 * z).abs() < 1e-15);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn residual_is_map_minus_linear_part() {
        let model = build_quadratic_ssm(scalar_spec(0.4, -0.2)).unwrap();
        let prev = [0.3, 1.1];
        let noise = [-0.6];
        let mut full = [0.0; 2];
        model.0.transition_map(&prev, &noise, &mut full);
        let mut resid = [0.0; 2];
        model.0.residual(&prev, &noise, &mut resid);
        let a = model.0.transition_matrix();
        let b = model.0.noise_loading();
        for i in 0..2 {
            let lin = a[(i, 0)] * prev[0] + a[(i, 1)] * prev[1] + b[(i, 0)] * noise[0];
            assert!((full[i] - lin - resid[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn initial_state_uses_zero_endogenous_part() {
        let model = build_quadratic_ssm(scalar_spec(0.5, 0.25)).unwrap();
        let mut s = [0.0; 2];
        model.0.initial_map(&[2.0], &mut s);
        let z0 = 0.6;
        assert!((s[1] - z0).abs() < 1e-15);
        assert!((s[0] - (z0 + 0.0 * z0 * z0)).abs() < 1e-15);
    }
}
