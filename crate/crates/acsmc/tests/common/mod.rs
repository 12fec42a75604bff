//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use acsmc::kalman::LinearGaussianSpec;
use acsmc::model::{simulate, ControlledModel};
use acsmc::models::lgssm;
use acsmc::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random model with `A` scaled to spectral norm `radius`.
pub fn random_lgssm(d: usize, d_noise: usize, d_obs: usize, radius: f64, seed: u64) -> LinearGaussianSpec {
    let mut rng = rng::from_seed(seed);
    let m = normal_matrix(d, d, &mut rng);
    let norm = (m.transpose() * &m).symmetric_eigenvalues().max().sqrt();
    let a = m * (radius / norm);
    let b = normal_matrix(d, d_noise, &mut rng) * 0.5;
    let dvec = DVector::from_fn(d_obs, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); 0.1 * z });
    let e = normal_matrix(d_obs, d, &mut rng);
    let f = DMatrix::from_diagonal_element(d_obs, d_obs, 0.25);
    LinearGaussianSpec::new(a, b, dvec, e, f).unwrap()
}

pub fn simulate_obs<M: ControlledModel>(model: &M, horizon: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = rng::from_seed(seed);
    simulate(model, horizon, &mut rng).unwrap().1
}

pub fn simulate_lgssm(spec: &LinearGaussianSpec, horizon: usize, seed: u64) -> Vec<DVector<f64>> {
    simulate_obs(&lgssm(spec.clone()).unwrap(), horizon, seed)
}

/// Joint mean and covariance of the stacked states `s_0..s_T`.
pub fn joint_state_moments(spec: &LinearGaussianSpec, horizon: usize) -> DMatrix<f64> {
    let d = spec.state_dim();
    let q = &spec.b * spec.b.transpose();
    let mut marg = vec![q.clone()];
    for t in 1..=horizon {
        let prev = &marg[t - 1];
        marg.push(&spec.a * prev * spec.a.transpose() + &q);
    }
    let mut cov = DMatrix::zeros(d * (horizon + 1), d * (horizon + 1));
    for s in 0..=horizon {
        let mut block = marg[s].clone();
        for t in s..=horizon {
            // Cov(s_t, s_s) = A^{t-s} Var(s_s)
            cov.view_mut((t * d, s * d), (d, d)).copy_from(&block);
            cov.view_mut((s * d, t * d), (d, d)).copy_from(&block.transpose());
            block = &spec.a * block;
        }
    }
    cov
}

pub fn gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    let r = x - mean;
    let w = chol.l().solve_lower_triangular(&r).unwrap();
    let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (x.len() as f64 * (2.0 * PI).ln() + logdet + w.norm_squared())
}

/// Tempered log-likelihood from the stacked joint Gaussian of `y_{1:T}`:
/// `N(y; m, F)^lambda = N(y; m, F / lambda) * const`.
pub fn stacked_loglik(spec: &LinearGaussianSpec, ys: &[DVector<f64>], lambda: f64) -> f64 {
    let horizon = ys.len();
    let d = spec.state_dim();
    let dy = spec.obs_dim();
    let states = joint_state_moments(spec, horizon);
    let mut e_big = DMatrix::zeros(dy * horizon, d * (horizon + 1));
    let mut f_big = DMatrix::zeros(dy * horizon, dy * horizon);
    for t in 0..horizon {
        e_big.view_mut((t * dy, (t + 1) * d), (dy, d)).copy_from(&spec.e);
        f_big.view_mut((t * dy, t * dy), (dy, dy)).copy_from(&(&spec.f / lambda));
    }
    let cov = &e_big * states * e_big.transpose() + f_big;
    let mean = DVector::from_iterator(dy * horizon, (0..horizon).flat_map(|_| spec.d.iter().copied()));
    let y = DVector::from_iterator(dy * horizon, ys.iter().flat_map(|y| y.iter().copied()));
    let logdet_f: f64 = spec.f.clone().cholesky().unwrap().l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let per_step = (1.0 - lambda) * 0.5 * dy as f64 * (2.0 * PI).ln() + (1.0 - lambda) * 0.5 * logdet_f
        - 0.5 * dy as f64 * lambda.ln();
    gaussian_logpdf(&y, &mean, &cov) + horizon as f64 * per_step
}

/// Posterior mean and variance of `s_t` given `y_{1:T}` from the stacked
/// joint Gaussian.
pub fn stacked_smoother(spec: &LinearGaussianSpec, ys: &[DVector<f64>], t: usize) -> (DVector<f64>, DMatrix<f64>) {
    let horizon = ys.len();
    let d = spec.state_dim();
    let dy = spec.obs_dim();
    let states = joint_state_moments(spec, horizon);
    let mut e_big = DMatrix::zeros(dy * horizon, d * (horizon + 1));
    let mut f_big = DMatrix::zeros(dy * horizon, dy * horizon);
    for k in 0..horizon {
        e_big.view_mut((k * dy, (k + 1) * d), (dy, d)).copy_from(&spec.e);
        f_big.view_mut((k * dy, k * dy), (dy, dy)).copy_from(&spec.f);
    }
    let syy = &e_big * &states * e_big.transpose() + f_big;
    let sxy = states.rows(t * d, d) * e_big.transpose();
    let mean_y = DVector::from_iterator(dy * horizon, (0..horizon).flat_map(|_| spec.d.iter().copied()));
    let y = DVector::from_iterator(dy * horizon, ys.iter().flat_map(|y| y.iter().copied()));
    let inv = syy.try_inverse().unwrap();
    let mean = &sxy * &inv * (y - mean_y);
    let cov = states.view((t * d, t * d), (d, d)) - &sxy * &inv * sxy.transpose();
    (mean, cov)
}

/// Gauss-Hermite nodes and weights for `int f(x) N(x; 0, 1) dx`
/// (Golub-Welsch on the probabilists' Hermite recurrence).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jac = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64).sqrt() } else { 0.0 });
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Forward filter on a uniform grid for a scalar Markov chain with
/// Gaussian transitions `x_t ~ N(mean(x_{t-1}), sd^2)`, `x_0 ~ N(m0, sd0^2)`
/// and observations `y_t ~ N(x_t, obs_sd^2)`. Returns `log p(y_{1:T})`.
pub fn grid_loglik_scalar(
    mean: impl Fn(f64) -> f64,
    sd: f64,
    init: (f64, f64),
    obs_sd: f64,
    ys: &[f64],
    range: (f64, f64),
    points: usize,
) -> f64 {
    let h = (range.1 - range.0) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| range.0 + i as f64 * h).collect();
    let npdf = |x: f64, m: f64, s: f64| (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * PI).sqrt());
    let mut density: Vec<f64> = grid.iter().map(|&x| npdf(x, init.0, init.1)).collect();
    let means: Vec<f64> = grid.iter().map(|&x| mean(x)).collect();
    let mut loglik = 0.0;
    for &y in ys {
        let mut next = vec![0.0; points];
        for (j, nx) in next.iter_mut().enumerate() {
            let x = grid[j];
            let mut acc = 0.0;
            for (i, &p) in density.iter().enumerate() {
                acc += p * npdf(x, means[i], sd);
            }
            *nx = acc * h;
        }
        for (j, nx) in next.iter_mut().enumerate() {
            *nx *= npdf(y, grid[j], obs_sd);
        }
        let mass: f64 = next.iter().sum::<f64>() * h;
        loglik += mass.ln();
        density = next.into_iter().map(|v| v / mass).collect();
    }
    loglik
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

pub fn report(label: &str, pass: bool, detail: &str) {
    println!("{} {label}: {detail}", if pass { "PASS" } else { "FAIL" });
}

/// Posterior mean and covariance of the whole path `s_{0:T}` (stacked).
pub fn stacked_path_posterior(spec: &LinearGaussianSpec, ys: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let horizon = ys.len();
    let d = spec.state_dim();
    let dy = spec.obs_dim();
    let states = joint_state_moments(spec, horizon);
    let mut e_big = DMatrix::zeros(dy * horizon, d * (horizon + 1));
    let mut f_big = DMatrix::zeros(dy * horizon, dy * horizon);
    for k in 0..horizon {
        e_big.view_mut((k * dy, (k + 1) * d), (dy, d)).copy_from(&spec.e);
        f_big.view_mut((k * dy, k * dy), (dy, dy)).copy_from(&spec.f);
    }
    let syy = &e_big * &states * e_big.transpose() + f_big;
    let sxy = &states * e_big.transpose();
    let mean_y = DVector::from_iterator(dy * horizon, (0..horizon).flat_map(|_| spec.d.iter().copied()));
    let y = DVector::from_iterator(dy * horizon, ys.iter().flat_map(|y| y.iter().copied()));
    let inv = syy.try_inverse().unwrap();
    let mean = &sxy * &inv * (y - mean_y);
    let cov = &states - &sxy * &inv * sxy.transpose();
    (mean, cov)
}

/// Exact posterior mean, posterior sd and log evidence of the offset `theta`
/// in `y_t = theta + E s_t + noise` (scalar observations) with
/// `theta ~ N(0, 1)`; `spec.d` is ignored.
pub fn conjugate_offset(spec: &LinearGaussianSpec, ys: &[DVector<f64>]) -> (f64, f64, f64) {
    let horizon = ys.len();
    let d = spec.state_dim();
    let states = joint_state_moments(spec, horizon);
    let mut e_big = DMatrix::zeros(horizon, d * (horizon + 1));
    for t in 0..horizon {
        e_big.view_mut((t, (t + 1) * d), (1, d)).copy_from(&spec.e);
    }
    let cov = &e_big * states * e_big.transpose() + DMatrix::identity(horizon, horizon) * spec.f[(0, 0)];
    let y = DVector::from_iterator(horizon, ys.iter().map(|v| v[0]));
    let ones = DVector::from_element(horizon, 1.0);
    let inv = cov.clone().try_inverse().unwrap();
    let precision = 1.0 + ones.dot(&(&inv * &ones));
    let mean = ones.dot(&(&inv * &y)) / precision;
    let evidence = gaussian_logpdf(&y, &DVector::zeros(horizon), &(cov + &ones * ones.transpose()));
    (mean, precision.recip().sqrt(), evidence)
}
