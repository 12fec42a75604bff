//! Log-quadratic twisting policies.
//!
//! A policy at time `t` is `psi_t(z, z') = exp(-Q(z, z'))` with
//! `Q(z, z') = z'^T A z' + z'^T b + z'^T C z + z^T D z + z^T e + f`, where
//! `z` is the previous state (or its transform) and `z'` the variable the
//! proposal draws (noise, or transformed state).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{LinearGaussianSpec, LAMBDA_FLOOR};
use crate::linalg::{self, cholesky, symmetrize};

/// Default learning-rate guard margin.
pub const DEFAULT_ALPHA: f64 = 0.4;

/// Lower bound on the post-refinement eigenvalue ratio.
pub const GUARD_ZETA: f64 = f64::EPSILON;

/// Current policy file format.
pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadCoeffs {
    #[serde(with = "linalg::rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "linalg::vector")]
    pub b: DVector<f64>,
    #[serde(with = "linalg::rows")]
    pub c: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub d: DMatrix<f64>,
    #[serde(with = "linalg::vector")]
    pub e: DVector<f64>,
    pub f: f64,
}

impl QuadCoeffs {
    /// All-zero coefficients, i.e. `psi = 1`, over `z'` of length `m` and
    /// `z` of length `n`.
    pub fn zeros(m: usize, n: usize) -> Self {
        QuadCoeffs {
            a: DMatrix::zeros(m, m),
            b: DVector::zeros(m),
            c: DMatrix::zeros(m, n),
            d: DMatrix::zeros(n, n),
            e: DVector::zeros(n),
            f: 0.0,
        }
    }

    /// Initial-time form `Q_0(z') = z'^T A z' + z'^T b + f`.
    pub fn initial(a: DMatrix<f64>, b: DVector<f64>, f: f64) -> Result<Self> {
        let m = b.len();
        Self::new(a, b, DMatrix::zeros(m, 0), DMatrix::zeros(0, 0), DVector::zeros(0), f)
    }

    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        e: DVector<f64>,
        f: f64,
    ) -> Result<Self> {
        let q = QuadCoeffs { a, b, c, d, e, f };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.shape();
        if self.a.shape() != (m, m)
            || self.c.shape() != (m, n)
            || self.d.shape() != (n, n)
            || self.e.len() != n
        {
            return Err(Error::Dimension(format!(
                "quadratic coefficients: A {:?}, b {}, C {:?}, D {:?}, e {}",
                self.a.shape(),
                m,
                self.c.shape(),
                self.d.shape(),
                self.e.len()
            )));
        }
        if self.a != self.a.transpose() || self.d != self.d.transpose() {
            return Err(Error::InvalidInput("quadratic coefficients: A and D must be symmetric".into()));
        }
        Ok(())
    }

    /// `(m, n)`: lengths of `z'` and `z`.
    pub fn shape(&self) -> (usize, usize) {
        (self.b.len(), self.e.len())
    }

    /// `Q(z, z')`.
    pub fn q(&self, z: &[f64], zp: &[f64]) -> f64 {
        let mut out = linalg::quad_form(&self.a, zp) + linalg::dot(zp, self.b.as_slice());
        if !z.is_empty() {
            let mut cz = 0.0;
            for (i, &zpi) in zp.iter().enumerate() {
                let mut row = 0.0;
                for (j, &zj) in z.iter().enumerate() {
                    row += self.c[(i, j)] * zj;
                }
                cz += zpi * row;
            }
            out += cz + linalg::quad_form(&self.d, z) + linalg::dot(z, self.e.as_slice());
        }
        out + self.f
    }

    /// `log psi = -Q(z, z')`.
    pub fn log_policy(&self, z: &[f64], zp: &[f64]) -> f64 {
        -self.q(z, zp)
    }

    /// `self + kappa * other`.
    pub fn add_scaled(&self, other: &QuadCoeffs, kappa: f64) -> QuadCoeffs {
        QuadCoeffs {
            a: &self.a + &other.a * kappa,
            b: &self.b + &other.b * kappa,
            c: &self.c + &other.c * kappa,
            d: &self.d + &other.d * kappa,
            e: &self.e + &other.e * kappa,
            f: self.f + kappa * other.f,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.f == 0.0
            && self.a.iter().chain(self.b.iter()).chain(self.c.iter()).all(|&v| v == 0.0)
            && self.d.iter().chain(self.e.iter()).all(|&v| v == 0.0)
    }

    /// Largest absolute difference over all coefficients.
    pub fn max_abs_diff(&self, other: &QuadCoeffs) -> f64 {
        let mats = [
            (&self.a - &other.a).amax(),
            (&self.b - &other.b).amax(),
            (&self.c - &other.c).amax(),
            (&self.d - &other.d).amax(),
            (&self.e - &other.e).amax(),
        ];
        mats.iter().fold((self.f - other.f).abs(), |acc, &v| acc.max(v))
    }
}

/// `log psi` with dimension checks.
pub fn eval_logpolicy(coeffs: &QuadCoeffs, z: &[f64], zp: &[f64]) -> Result<f64> {
    let (m, n) = coeffs.shape();
    if zp.len() != m || z.len() != n {
        return Err(Error::Dimension(format!(
            "policy over ({n}, {m}) evaluated at ({}, {})",
            z.len(),
            zp.len()
        )));
    }
    Ok(coeffs.log_policy(z, zp))
}

/// Coefficients for every time `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPolicy {
    pub steps: Vec<QuadCoeffs>,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format_version: u32,
    steps: Vec<QuadCoeffs>,
}

impl QuadraticPolicy {
    /// The constant-one policy with the given per-time shapes.
    pub fn constant_one(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        QuadraticPolicy { steps: shapes.into_iter().map(|(m, n)| QuadCoeffs::zeros(m, n)).collect() }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn to_json(&self) -> String {
        let file = PolicyFile { format_version: POLICY_FORMAT_VERSION, steps: self.steps.clone() };
        serde_json::to_string(&file).expect("policy serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("policy file: {e}")))?;
        if file.format_version != POLICY_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "policy file version {} is not supported",
                file.format_version
            )));
        }
        for s in &file.steps {
            s.validate()?;
        }
        Ok(QuadraticPolicy { steps: file.steps })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    /// Penalty per support point on standardized coefficients.
    pub shrinkage: f64,
    /// Scale features to unit variance before penalizing.
    pub standardize: bool,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig { shrinkage: 1e-6, standardize: true }
    }
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrinkage > 0.0 && self.shrinkage.is_finite()) {
            return Err(Error::InvalidInput(format!("ridge shrinkage {} must be positive", self.shrinkage)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Feature {
    Aq(usize, usize),
    B(usize),
    C(usize, usize),
    Dq(usize, usize),
    E(usize),
}

fn feature_basis(m: usize, n: usize) -> Vec<Feature> {
    let mut f = Vec::new();
    for i in 0..m {
        for j in i..m {
            f.push(Feature::Aq(i, j));
        }
    }
    f.extend((0..m).map(Feature::B));
    for i in 0..m {
        for j in 0..n {
            f.push(Feature::C(i, j));
        }
    }
    for i in 0..n {
        for j in i..n {
            f.push(Feature::Dq(i, j));
        }
    }
    f.extend((0..n).map(Feature::E));
    f
}

fn feature_value(feat: Feature, z: &[f64], zp: &[f64]) -> f64 {
    match feat {
        Feature::Aq(i, j) => zp[i] * zp[j],
        Feature::B(i) => zp[i],
        Feature::C(i, j) => zp[i] * z[j],
        Feature::Dq(i, j) => z[i] * z[j],
        Feature::E(i) => z[i],
    }
}

/// Ridge fit of `-Q(z_i, z'_i)` to `log_targets` over the quadratic basis.
///
/// `z` holds `n` values per point and `zp` holds `m` values per point, both
/// flat. The intercept is not penalized.
pub fn fit_logquadratic(
    m: usize,
    n: usize,
    z: &[f64],
    zp: &[f64],
    log_targets: &[f64],
    ridge: &RidgeConfig,
) -> Result<QuadCoeffs> {
    ridge.validate()?;
    let npts = log_targets.len();
    if npts == 0 {
        return Err(Error::InvalidInput("no support points to fit".into()));
    }
    if z.len() != npts * n || zp.len() != npts * m {
        return Err(Error::Dimension(format!(
            "support points: {} z values and {} z' values for {npts} points of shape ({n}, {m})",
            z.len(),
            zp.len()
        )));
    }
    if let Some(i) = log_targets.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite regression target at index {i}")));
    }
    let basis = feature_basis(m, n);
    let k = basis.len();
    let point = |i: usize| (&z[i * n..(i + 1) * n], &zp[i * m..(i + 1) * m]);

    // Response is Q = -log target.
    let y_mean = -log_targets.iter().sum::<f64>() / npts as f64;
    let mut mean = vec![0.0; k];
    for i in 0..npts {
        let (zi, zpi) = point(i);
        for (mu, &feat) in mean.iter_mut().zip(&basis) {
            *mu += feature_value(feat, zi, zpi);
        }
    }
    mean.iter_mut().for_each(|v| *v /= npts as f64);
    let mut scale = vec![1.0; k];
    if ridge.standardize {
        let mut var = vec![0.0; k];
        for i in 0..npts {
            let (zi, zpi) = point(i);
            for (c, &feat) in basis.iter().enumerate() {
                let dv = feature_value(feat, zi, zpi) - mean[c];
                var[c] += dv * dv;
            }
        }
        for (s, v) in scale.iter_mut().zip(&var) {
            let sd = (v / npts as f64).sqrt();
            *s = if sd > 0.0 { sd } else { 1.0 };
        }
    }

    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for i in 0..npts {
        let (zi, zpi) = point(i);
        for (c, &feat) in basis.iter().enumerate() {
            row[c] = (feature_value(feat, zi, zpi) - mean[c]) / scale[c];
        }
        let yi = -log_targets[i] - y_mean;
        for c in 0..k {
            rhs[c] += row[c] * yi;
            for r in c..k {
                gram[(r, c)] += row[r] * row[c];
            }
        }
    }
    let penalty = ridge.shrinkage * npts as f64;
    for c in 0..k {
        for r in c + 1..k {
            gram[(c, r)] = gram[(r, c)];
        }
        gram[(c, c)] += penalty;
    }
    let beta = if k > 0 {
        let l = cholesky(&gram)?;
        let mut sol = rhs.clone();
        l.solve_lower_triangular_mut(&mut sol);
        l.transpose().solve_upper_triangular_mut(&mut sol);
        sol
    } else {
        DVector::zeros(0)
    };

    let mut out = QuadCoeffs::zeros(m, n);
    let mut intercept = y_mean;
    for (c, &feat) in basis.iter().enumerate() {
        let coef = beta[c] / scale[c];
        intercept -= coef * mean[c];
        match feat {
            Feature::Aq(i, j) if i == j => out.a[(i, i)] = coef,
            Feature::Aq(i, j) => {
                out.a[(i, j)] = 0.5 * coef;
                out.a[(j, i)] = 0.5 * coef;
            }
            Feature::B(i) => out.b[i] = coef,
            Feature::C(i, j) => out.c[(i, j)] = coef,
            Feature::Dq(i, j) if i == j => out.d[(i, i)] = coef,
            Feature::Dq(i, j) => {
                out.d[(i, j)] = 0.5 * coef;
                out.d[(j, i)] = 0.5 * coef;
            }
            Feature::E(i) => out.e[i] = coef,
        }
    }
    out.f = intercept;
    Ok(out)
}

/// Lifts `Q_0(s~)` over the linearized state `s~ = A s + B e` to
/// `Q(s, e)`. `A` may have zero columns (initial time, no previous state).
pub fn dim_reduce_lift(reduced: &QuadCoeffs, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<QuadCoeffs> {
    let (d, n_red) = reduced.shape();
    if n_red != 0 {
        return Err(Error::Dimension("lift expects initial-time shaped coefficients".into()));
    }
    if a.nrows() != d || b.nrows() != d {
        return Err(Error::Dimension(format!(
            "lift: reduced dimension {d}, A {:?}, B {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let bt_a = b.transpose() * &reduced.a;
    Ok(QuadCoeffs {
        a: symmetrize(&(&bt_a * b)),
        b: b.transpose() * &reduced.b,
        c: &bt_a * a * 2.0,
        d: symmetrize(&(a.transpose() * &reduced.a * a)),
        e: a.transpose() * &reduced.b,
        f: reduced.f,
    })
}

/// Guarded refinement of one time step: returns `current + kappa * increment`
/// and `kappa`, where `kappa` keeps `alpha I + A` positive definite.
pub fn refine_step(
    t: usize,
    current: &QuadCoeffs,
    increment: &QuadCoeffs,
    alpha: f64,
) -> Result<(QuadCoeffs, f64)> {
    if current.shape() != increment.shape() {
        return Err(Error::Dimension(format!(
            "refinement at t = {t}: shapes {:?} and {:?}",
            current.shape(),
            increment.shape()
        )));
    }
    let m = current.shape().0;
    if m == 0 {
        return Ok((current.add_scaled(increment, 1.0), 1.0));
    }
    let ident = DMatrix::<f64>::identity(m, m);
    let base = &current.a + &ident * alpha;
    cholesky(&base).map_err(|_| Error::PolicyInvariant {
        t,
        reason: format!("alpha I + A is not positive definite (alpha = {alpha})"),
    })?;
    let (_, root_inv) = linalg::sqrt_spd(&base).map_err(|_| Error::PolicyInvariant {
        t,
        reason: "alpha I + A has no positive square root".into(),
    })?;
    let scaled = symmetrize(&(&root_inv * &increment.a * &root_inv));
    let (vals, _) = linalg::symeig(&scaled)?;
    let lam_min = vals[0];
    let mut kappa = if 1.0 + lam_min > 0.0 { 1.0 } else { f64::min(1.0, (GUARD_ZETA - 1.0) / lam_min) };
    // Rounding can leave the closed-form rate marginally infeasible; shrink
    // it by a relative amount that starts at a few ulps and doubles.
    let closed_form = kappa;
    let mut shrink = f64::EPSILON * 4.0;
    loop {
        let refined = current.add_scaled(increment, kappa);
        if kappa == 0.0 || cholesky(&(&refined.a + &ident * alpha)).is_ok() {
            return Ok((refined, kappa));
        }
        kappa = if shrink >= 1.0 { 0.0 } else { closed_form * (1.0 - shrink) };
        shrink *= 2.0;
    }
}

/// Applies [`refine_step`] at every time step.
pub fn constrained_refine(
    current: &QuadraticPolicy,
    increment: &QuadraticPolicy,
    alpha: f64,
) -> Result<(QuadraticPolicy, Vec<f64>)> {
    if current.steps.len() != increment.steps.len() {
        return Err(Error::Dimension(format!(
            "refinement: policies of horizon {} and {}",
            current.horizon(),
            increment.horizon()
        )));
    }
    let mut steps = Vec::with_capacity(current.steps.len());
    let mut rates = Vec::with_capacity(current.steps.len());
    for (t, (c, i)) in current.steps.iter().zip(&increment.steps).enumerate() {
        let (s, k) = refine_step(t, c, i, alpha)?;
        steps.push(s);
        rates.push(k);
    }
    Ok((QuadraticPolicy { steps }, rates))
}

/// Optimal policy of a tempered linear-Gaussian model, both over the
/// state (`reduced[t]` in the variable `s_t`) and lifted to noise space.
#[derive(Debug, Clone)]
pub struct OptimalPolicy {
    pub reduced: Vec<QuadCoeffs>,
    pub lifted: QuadraticPolicy,
}

/// Backward recursion for `psi*_t(s_t) = exp(-Q_0(s_t))`, `t = 0..=T`.
pub fn optimal_policy_lgssm(
    spec: &LinearGaussianSpec,
    ys: &[DVector<f64>],
    lambda: f64,
) -> Result<OptimalPolicy> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda = {lambda} outside [0, 1]")));
    }
    let lambda = if lambda < LAMBDA_FLOOR { 0.0 } else { lambda };
    let d = spec.state_dim();
    let dy = spec.obs_dim() as f64;
    let horizon = ys.len();
    let f_chol = cholesky(&spec.f)?;
    let f_inv = linalg::inverse_from_cholesky(&f_chol);
    let logdet_f = linalg::logdet_from_cholesky(&f_chol);
    let obs_a = symmetrize(&(spec.e.transpose() * &f_inv * &spec.e * 0.5));

    let obs_term = |t: usize| -> Result<QuadCoeffs> {
        if t == 0 {
            return Ok(QuadCoeffs::zeros(d, 0));
        }
        let y = &ys[t - 1];
        if y.len() != spec.obs_dim() {
            return Err(Error::Dimension(format!("observation {t} has the wrong length")));
        }
        let r = y - &spec.d;
        let fr = &f_inv * &r;
        let c = 0.5 * r.dot(&fr) + 0.5 * dy * (2.0 * PI).ln() + 0.5 * logdet_f;
        QuadCoeffs::initial(obs_a.clone(), -(spec.e.transpose() * fr), c)
    };
    let scale = |q: QuadCoeffs| QuadCoeffs { a: q.a * lambda, b: q.b * lambda, f: q.f * lambda, ..q };

    let mut reduced = vec![QuadCoeffs::zeros(d, 0); horizon + 1];
    reduced[horizon] = scale(obs_term(horizon)?);
    let a = &spec.a;
    let b = &spec.b;
    let m = spec.noise_dim();
    for t in (0..horizon).rev() {
        let next = &reduced[t + 1];
        let j = b.transpose() * &next.a * a;
        let k_inv = DMatrix::<f64>::identity(m, m) + b.transpose() * &next.a * b * 2.0;
        let k_chol = cholesky(&symmetrize(&k_inv))?;
        let k = linalg::inverse_from_cholesky(&k_chol);
        let logdet_k = -linalg::logdet_from_cholesky(&k_chol);
        let bt_b = b.transpose() * &next.b;
        let own = scale(obs_term(t)?);
        let a_t = symmetrize(&(&own.a + a.transpose() * &next.a * a - j.transpose() * &k * &j * 2.0));
        let b_t = &own.b + a.transpose() * &next.b - j.transpose() * &k * &bt_b * 2.0;
        let c_t = own.f + next.f - 0.5 * bt_b.dot(&(&k * &bt_b)) - 0.5 * logdet_k;
        reduced[t] = QuadCoeffs::initial(a_t, b_t, c_t)?;
    }

    let no_prev = DMatrix::zeros(d, 0);
    let lifted = reduced
        .iter()
        .enumerate()
        .map(|(t, q)| dim_reduce_lift(q, if t == 0 { &no_prev } else { a }, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(OptimalPolicy { reduced, lifted: QuadraticPolicy { steps: lifted } })
}

/// Closed-form twisting of a Gaussian `N(eta, S S^T)` by
/// `exp(-x^T A x - x^T u)`.
///
/// With `M = I + 2 S^T A S`, the twisted law is `N(eta - K v, K)` where
/// `K = S M^{-1} S^T` and `v = 2 A eta + u`, and the log expectation of the
/// twisting function is
/// `-1/2 log det M - eta^T A eta - eta^T u + 1/2 v^T K v`.
/// Zero coefficients reproduce the untwisted law exactly.
#[derive(Debug, Clone)]
pub struct GaussianTwist {
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
    half_logdet_m: f64,
}

impl GaussianTwist {
    /// `sqrt_cov = None` means `S = I`.
    pub fn new(sqrt_cov: Option<&DMatrix<f64>>, a: &DMatrix<f64>) -> Result<Self> {
        let m = a.nrows();
        let ident = DMatrix::<f64>::identity(m, m);
        let mmat = match sqrt_cov {
            Some(s) => &ident + linalg::matmul(&linalg::matmul(&s.transpose(), a), s) * 2.0,
            None => &ident + a * 2.0,
        };
        let l = cholesky(&symmetrize(&mmat))?;
        let linv_t = linalg::lower_inverse(&l).transpose();
        let factor = match sqrt_cov {
            Some(s) => linalg::matmul(s, &linv_t),
            None => linv_t,
        };
        let cov = linalg::matmul(&factor, &factor.transpose());
        let half_logdet_m = l.diagonal().iter().map(|v| v.ln()).sum();
        Ok(GaussianTwist { cov, factor, half_logdet_m })
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn shift(&self, eta: &[f64], a: &DMatrix<f64>, u: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; u.len()];
        linalg::mat_vec(a, eta, &mut v);
        for (vi, &ui) in v.iter_mut().zip(u) {
            *vi = 2.0 * *vi + ui;
        }
        v
    }

    /// Twisted mean `eta - K (2 A eta + u)`.
    pub fn mean(&self, eta: &[f64], a: &DMatrix<f64>, u: &[f64], out: &mut [f64]) {
        let v = self.shift(eta, a, u);
        linalg::mat_vec(&self.cov, &v, out);
        for (o, &e) in out.iter_mut().zip(eta) {
            *o = e - *o;
        }
    }

    /// Log of `E[exp(-x^T A x - x^T u)]` under the untwisted law.
    pub fn log_normalizer(&self, eta: &[f64], a: &DMatrix<f64>, u: &[f64]) -> f64 {
        let v = self.shift(eta, a, u);
        -self.half_logdet_m - linalg::quad_form(a, eta) - linalg::dot(eta, u)
            + 0.5 * linalg::quad_form(&self.cov, &v)
    }

    /// `out = mean + F draws` with `F F^T = K`.
    pub fn sample(&self, mean: &[f64], draws: &[f64], out: &mut [f64]) {
        affine_draw(mean, &self.factor, draws, out);
    }
}

/// `out = mean + F draws`, accumulated left to right.
pub fn affine_draw(mean: &[f64], factor: &DMatrix<f64>, draws: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &x) in draws.iter().enumerate() {
            acc += factor[(i, j)] * x;
        }
        *o = mean[i] + acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_coeffs(m: usize, n: usize, seed: u64) -> QuadCoeffs {
        let mut r = rng::from_seed(seed);
        let mut draw = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r));
        let a = draw(m, m);
        let d = draw(n, n);
        QuadCoeffs::new(
            symmetrize(&(&a * a.transpose())),
            draw(m, 1).column(0).into(),
            draw(m, n),
            symmetrize(&(&d * d.transpose())),
            draw(n, 1).column(0).into(),
            0.3,
        )
        .unwrap()
    }

    #[test]
    fn q_matches_hand_evaluation() {
        let mut c = QuadCoeffs::zeros(2, 1);
        c.a = DMatrix::identity(2, 2);
        c.c[(1, 0)] = 2.0;
        c.e[0] = -1.0;
        c.f = 0.5;
        // 1 + 4 + 2 * 2 * 3 - 3 + 0.5
        assert_eq!(c.q(&[3.0], &[1.0, 2.0]), 14.5);
        assert_eq!(c.log_policy(&[3.0], &[1.0, 2.0]), -14.5);
    }

    #[test]
    fn fit_recovers_exact_quadratic() {
        let truth = random_coeffs(2, 2, 1);
        let mut r = rng::from_seed(2);
        let npts = 400;
        let z: Vec<f64> = (0..npts * 2).map(|_| StandardNormal.sample(&mut r)).collect();
        let zp: Vec<f64> = (0..npts * 2).map(|_| StandardNormal.sample(&mut r)).collect();
        let targets: Vec<f64> = (0..npts).map(|i| truth.log_policy(&z[2 * i..2 * i + 2], &zp[2 * i..2 * i + 2])).collect();
        let ridge = RidgeConfig { shrinkage: 1e-12, standardize: true };
        let fit = fit_logquadratic(2, 2, &z, &zp, &targets, &ridge).unwrap();
        assert!(fit.max_abs_diff(&truth) < 1e-6, "{}", fit.max_abs_diff(&truth));
    }

    #[test]
    fn fit_rejects_bad_input() {
        let ridge = RidgeConfig::default();
        assert!(fit_logquadratic(1, 0, &[], &[1.0], &[f64::NAN], &ridge).is_err());
        assert!(fit_logquadratic(1, 1, &[1.0], &[1.0, 2.0], &[0.0], &ridge).is_err());
        assert!(fit_logquadratic(1, 0, &[], &[], &[], &ridge).is_err());
    }

    #[test]
    fn lift_agrees_with_reduced_form() {
        let mut r = rng::from_seed(3);
        let mut draw = |rows: usize, cols: usize| DMatrix::<f64>::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r));
        let a = draw(3, 3);
        let b = draw(3, 2);
        let red = random_coeffs(3, 0, 4);
        let lifted = dim_reduce_lift(&red, &a, &b).unwrap();
        for _ in 0..5 {
            let s = draw(3, 1);
            let e = draw(2, 1);
            let lin = &a * &s + &b * &e;
            let want = red.q(&[], lin.as_slice());
            let got = lifted.q(s.as_slice(), e.as_slice());
            assert!((want - got).abs() < 1e-10 * want.abs().max(1.0));
        }
    }

    #[test]
    fn zero_increment_keeps_full_rate() {
        let cur = random_coeffs(2, 1, 5);
        let (refined, kappa) = refine_step(0, &cur, &QuadCoeffs::zeros(2, 1), DEFAULT_ALPHA).unwrap();
        assert_eq!(kappa, 1.0);
        assert_eq!(refined, cur);
    }

    #[test]
    fn scalar_refinement_is_damped_to_the_boundary() {
        let cur = QuadCoeffs::zeros(1, 0);
        let mut inc = QuadCoeffs::zeros(1, 0);
        inc.a[(0, 0)] = -2.0;
        let (refined, kappa) = refine_step(0, &cur, &inc, 0.4).unwrap();
        // lambda_min = -5, kappa = (1 - zeta) / 5
        assert!((kappa - (1.0 - GUARD_ZETA) / 5.0).abs() < 1e-15);
        assert!(refined.a[(0, 0)] + 0.4 > 0.0);
    }

    #[test]
    fn refine_rejects_shape_mismatch_and_infeasible_start() {
        assert!(refine_step(0, &QuadCoeffs::zeros(1, 0), &QuadCoeffs::zeros(2, 0), 0.4).is_err());
        let mut bad = QuadCoeffs::zeros(1, 0);
        bad.a[(0, 0)] = -1.0;
        assert!(refine_step(0, &bad, &QuadCoeffs::zeros(1, 0), 0.4).is_err());
    }

    #[test]
    fn twist_normalizer_and_mean_match_quadrature() {
        let (eta, s, a, u) = (0.2, 0.7, 0.3, 0.5);
        let twist = GaussianTwist::new(Some(&DMatrix::from_element(1, 1, s)), &DMatrix::from_element(1, 1, a)).unwrap();
        let am = DMatrix::from_element(1, 1, a);
        let (n, lo, hi) = (20_001, -12.0, 12.0);
        let h = (hi - lo) / (n - 1) as f64;
        let (mut mass, mut first) = (0.0, 0.0);
        for i in 0..n {
            let x = lo + i as f64 * h;
            let dens = (-0.5 * ((x - eta) / s).powi(2)).exp() / (s * (2.0 * PI).sqrt());
            let w = dens * (-a * x * x - u * x).exp() * h;
            mass += w;
            first += w * x;
        }
        assert!((twist.log_normalizer(&[eta], &am, &[u]) - mass.ln()).abs() < 1e-10);
        let mut mean = [0.0];
        twist.mean(&[eta], &am, &[u], &mut mean);
        assert!((mean[0] - first / mass).abs() < 1e-10);
    }

    #[test]
    fn zero_twist_is_identity() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 2.0]);
        let twist = GaussianTwist::new(Some(&s), &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(twist.log_normalizer(&[1.0, -1.0], &DMatrix::zeros(2, 2), &[0.0, 0.0]), 0.0);
        assert!((twist.cov() - &s * s.transpose()).abs().max() < 1e-14);
    }

    #[test]
    fn policy_json_round_trip() {
        let policy = QuadraticPolicy { steps: vec![random_coeffs(2, 0, 6), random_coeffs(2, 3, 7)] };
        let back = QuadraticPolicy::from_json(&policy.to_json()).unwrap();
        assert_eq!(back, policy);
        let wrong = policy.to_json().replace("\"format_version\":1", "\"format_version\":99");
        assert!(QuadraticPolicy::from_json(&wrong).is_err());
    }
}
