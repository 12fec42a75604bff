//! Exact filtering and smoothing for tempered linear-Gaussian models.
//!
//! The model is `s_0 = B e_0`, `s_t = A s_{t-1} + B e_t`,
//! `y_t ~ N(d + E s_t, F)` with standard normal `e_t`. Tempering raises
//! every observation density to the power `lambda`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky, logdet_from_cholesky, symmetrize};

/// Inverse temperatures below this are treated as zero.
pub const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianSpec {
    /// State transition matrix, `d x d`.
    #[serde(with = "linalg::rows")]
    pub a: DMatrix<f64>,
    /// Noise loading, `d x d_noise`.
    #[serde(with = "linalg::rows")]
    pub b: DMatrix<f64>,
    /// Observation offset, length `d_y`.
    #[serde(with = "linalg::vector")]
    pub d: DVector<f64>,
    /// Observation loading, `d_y x d`.
    #[serde(with = "linalg::rows")]
    pub e: DMatrix<f64>,
    /// Observation noise covariance, `d_y x d_y`.
    #[serde(with = "linalg::rows")]
    pub f: DMatrix<f64>,
}

impl LinearGaussianSpec {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        d: DVector<f64>,
        e: DMatrix<f64>,
        f: DMatrix<f64>,
    ) -> Result<Self> {
        let spec = LinearGaussianSpec { a, b, d, e, f };
        spec.validate()?;
        Ok(spec)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.d.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.a.nrows();
        let dy = self.d.len();
        let dims_ok = d > 0
            && dy > 0
            && self.b.ncols() > 0
            && self.a.ncols() == d
            && self.b.nrows() == d
            && self.e.shape() == (dy, d)
            && self.f.shape() == (dy, dy);
        if !dims_ok {
            return Err(Error::Dimension(format!(
                "linear-Gaussian spec: A {:?}, B {:?}, d {}, E {:?}, F {:?}",
                self.a.shape(),
                self.b.shape(),
                dy,
                self.e.shape(),
                self.f.shape()
            )));
        }
        let all = self.a.iter().chain(self.b.iter()).chain(self.d.iter());
        if all.chain(self.e.iter()).chain(self.f.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("linear-Gaussian spec has non-finite entries".into()));
        }
        if (&self.f - self.f.transpose()).amax() > 1e-12 * self.f.amax().max(1.0) {
            return Err(Error::InvalidInput("observation covariance F is not symmetric".into()));
        }
        cholesky(&self.f)?;
        Ok(())
    }
}

fn check_obs(spec: &LinearGaussianSpec, ys: &[DVector<f64>]) -> Result<()> {
    for (t, y) in ys.iter().enumerate() {
        if y.len() != spec.obs_dim() {
            return Err(Error::Dimension(format!(
                "observation {} has length {}, expected {}",
                t + 1,
                y.len(),
                spec.obs_dim()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("observation {} is not finite", t + 1)));
        }
    }
    Ok(())
}

/// Filtered and one-step predicted moments for `t = 0..=T`.
struct FilterPass {
    filtered_mean: Vec<DVector<f64>>,
    filtered_cov: Vec<DMatrix<f64>>,
    predicted_cov: Vec<DMatrix<f64>>,
    loglik: f64,
}

fn filter(spec: &LinearGaussianSpec, ys: &[DVector<f64>], lambda: f64) -> Result<FilterPass> {
    spec.validate()?;
    check_obs(spec, ys)?;
    let d = spec.state_dim();
    let dy = spec.obs_dim() as f64;
    let q = &spec.b * spec.b.transpose();
    let f_chol = cholesky(&spec.f)?;
    let logdet_f = logdet_from_cholesky(&f_chol);
    let r = &spec.f / lambda;
    let step_const =
        (1.0 - lambda) * 0.5 * dy * (2.0 * PI).ln() + 0.5 * (1.0 - lambda) * logdet_f
            - 0.5 * dy * lambda.ln();

    let mut m = DVector::zeros(d);
    let mut p = q.clone();
    let mut out = FilterPass {
        filtered_mean: vec![m.clone()],
        filtered_cov: vec![p.clone()],
        predicted_cov: vec![p.clone()],
        loglik: 0.0,
    };
    let ident = DMatrix::<f64>::identity(d, d);
    for y in ys {
        m = &spec.a * &m;
        p = symmetrize(&(&spec.a * &p * spec.a.transpose() + &q));
        out.predicted_cov.push(p.clone());

        let innov = y - &spec.d - &spec.e * &m;
        let s = symmetrize(&(&spec.e * &p * spec.e.transpose() + &r));
        let s_chol = cholesky(&s)?;
        let s_inv = linalg::inverse_from_cholesky(&s_chol);
        out.loglik += -0.5 * dy * (2.0 * PI).ln() - 0.5 * logdet_from_cholesky(&s_chol)
            - 0.5 * innov.dot(&(&s_inv * &innov))
            + step_const;

        let gain = &p * spec.e.transpose() * &s_inv;
        m += &gain * innov;
        let i_ke = &ident - &gain * &spec.e;
        p = symmetrize(&(&i_ke * &p * i_ke.transpose() + &gain * &r * gain.transpose()));
        out.filtered_mean.push(m.clone());
        out.filtered_cov.push(p.clone());
    }
    Ok(out)
}

/// Log-likelihood of `y_{1:T}` under the model with observation densities
/// raised to `lambda`.
pub fn kalman_loglik(spec: &LinearGaussianSpec, ys: &[DVector<f64>], lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda = {lambda} outside [0, 1]")));
    }
    if lambda < LAMBDA_FLOOR {
        spec.validate()?;
        check_obs(spec, ys)?;
        return Ok(0.0);
    }
    Ok(filter(spec, ys, lambda)?.loglik)
}

/// Posterior mean and covariance of one state.
#[derive(Debug, Clone)]
pub struct GaussianMarginal {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Rauch-Tung-Striebel smoothed marginals of `s_t | y_{1:T}` for `t = 0..=T`.
pub fn kalman_smoother_marginals(
    spec: &LinearGaussianSpec,
    ys: &[DVector<f64>],
) -> Result<Vec<GaussianMarginal>> {
    let pass = filter(spec, ys, 1.0)?;
    let n = pass.filtered_mean.len();
    let mut out = vec![
        GaussianMarginal {
            mean: pass.filtered_mean[n - 1].clone(),
            cov: pass.filtered_cov[n - 1].clone(),
        };
        n
    ];
    for t in (0..n - 1).rev() {
        let pf = &pass.filtered_cov[t];
        let pp = &pass.predicted_cov[t + 1];
        let pp_inv = pinv_sym(pp);
        let gain = pf * spec.a.transpose() * pp_inv;
        let mean_pred = &spec.a * &pass.filtered_mean[t];
        let mean = &pass.filtered_mean[t] + &gain * (&out[t + 1].mean - mean_pred);
        let cov = symmetrize(&(pf + &gain * (&out[t + 1].cov - pp) * gain.transpose()));
        out[t] = GaussianMarginal { mean, cov };
    }
    Ok(out)
}

/// Inverse of a symmetric PSD matrix, falling back to the pseudo-inverse
/// when it is singular.
fn pinv_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Ok(l) = cholesky(m) {
        return linalg::inverse_from_cholesky(&l);
    }
    let eig = symmetrize(m).symmetric_eigen();
    let tol = 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let inv_vals = eig.eigenvalues.map(|v| if v > tol { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose()
}
