use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::linalg::{self, cholesky};

/// `y ~ N(d + E s, F)`.
#[derive(Debug, Clone)]
pub(crate) struct GaussianObs {
    offset: DVector<f64>,
    loading: DMatrix<f64>,
    chol: DMatrix<f64>,
    chol_inv: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianObs {
    pub fn new(offset: &DVector<f64>, loading: &DMatrix<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol = cholesky(cov)?;
        let chol_inv = linalg::lower_inverse(&chol);
        let log_norm =
            -0.5 * offset.len() as f64 * (2.0 * PI).ln() - 0.5 * linalg::logdet_from_cholesky(&chol);
        Ok(GaussianObs { offset: offset.clone(), loading: loading.clone(), chol, chol_inv, log_norm })
    }

    pub fn logdensity(&self, state: &[f64], y: &[f64]) -> f64 {
        let dy = y.len();
        let mut resid = vec![0.0; dy];
        for (i, r) in resid.iter_mut().enumerate() {
            let mut mean = self.offset[i];
            for (j, &s) in state.iter().enumerate() {
                mean += self.loading[(i, j)] * s;
            }
            *r = y[i] - mean;
        }
        let mut sq = 0.0;
        for i in 0..dy {
            let mut w = 0.0;
            for (j, &r) in resid.iter().enumerate().take(i + 1) {
                w += self.chol_inv[(i, j)] * r;
            }
            sq += w * w;
        }
        self.log_norm - 0.5 * sq
    }

    pub fn sample(&self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let dy = self.offset.len();
        let u: Vec<f64> = (0..dy).map(|_| StandardNormal.sample(rng)).collect();
        (0..dy)
            .map(|i| {
                let mut v = self.offset[i];
                for (j, &s) in state.iter().enumerate() {
                    v += self.loading[(i, j)] * s;
                }
                for (j, &uj) in u.iter().enumerate().take(i + 1) {
                    v += self.chol[(i, j)] * uj;
                }
                v
            })
            .collect()
    }
}
