use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::bessel::log_bessel_i;
use crate::error::{Error, Result};
use crate::model::{DensityDriven, DensityDrivenModel, GaussianProposal, ModelDims};

/// Market return and risk-free rate implied by the pricing solution.
pub trait PricingFunctions: Send + Sync {
    /// `M(x_{t-1}, sigma2_{t-1}, x_t, sigma2_t, dd_t)`.
    fn market_return(&self, x_prev: f64, var_prev: f64, x: f64, var: f64, div_growth: f64) -> f64;

    /// `R(x_t, sigma2_t)`.
    fn risk_free(&self, x: f64, var: f64) -> f64;
}

/// `M = m0 + m1 x_prev + m2 sigma2_prev + m3 x + m4 sigma2 + m5 dd`,
/// `R = r0 + r1 x + r2 sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinePricing {
    pub market: [f64; 6],
    pub risk_free: [f64; 3],
}

impl Default for AffinePricing {
    fn default() -> Self {
        AffinePricing { market: [0.0, 0.0, 0.0, 0.0, 0.0, 1.0], risk_free: [0.002, 1.0, 0.0] }
    }
}

impl PricingFunctions for AffinePricing {
    fn market_return(&self, x_prev: f64, var_prev: f64, x: f64, var: f64, div_growth: f64) -> f64 {
        let m = &self.market;
        m[0] + m[1] * x_prev + m[2] * var_prev + m[3] * x + m[4] * var + m[5] * div_growth
    }

    fn risk_free(&self, x: f64, var: f64) -> f64 {
        self.risk_free[0] + self.risk_free[1] * x + self.risk_free[2] * var
    }
}

/// Long-run risk model with autoregressive gamma volatility. The state is
/// `(x_t, sigma2_t)`; observations are consumption growth, dividend growth,
/// market return and risk-free rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgLrrSpec {
    /// Time preference; carried for pricing solvers.
    pub delta: f64,
    /// Risk aversion; carried for pricing solvers.
    pub gamma: f64,
    /// Elasticity of intertemporal substitution; carried for pricing solvers.
    pub psi: f64,
    pub mu: f64,
    pub rho: f64,
    pub phi_x: f64,
    /// Volatility persistence.
    pub nu: f64,
    /// Gamma shape.
    pub phi_s: f64,
    /// Gamma scale.
    pub c: f64,
    pub mu_d: f64,
    pub big_phi: f64,
    pub phi_dc: f64,
    pub phi_d: f64,
    pub phi_m: f64,
    pub phi_r: f64,
    #[serde(default)]
    pub pricing: AffinePricing,
}

impl ArgLrrSpec {
    /// Stationary mean `phi_s c / (1 - nu)`.
    pub fn long_run_variance(&self) -> f64 {
        self.phi_s * self.c / (1.0 - self.nu)
    }

    /// Conditional mean and variance of `sigma2_t` given `sigma2_{t-1}`.
    pub fn arg_moments(&self, var_prev: f64) -> (f64, f64) {
        (self.phi_s * self.c + self.nu * var_prev, self.phi_s * self.c * self.c + 2.0 * self.c * self.nu * var_prev)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.delta, self.gamma, self.psi, self.mu, self.rho, self.phi_x, self.nu, self.phi_s, self.c, self.mu_d,
            self.big_phi, self.phi_dc, self.phi_d, self.phi_m, self.phi_r,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("long-run risk spec has non-finite parameters".into()));
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(Error::InvalidInput(format!("nu = {} outside (0, 1)", self.nu)));
        }
        if self.phi_s <= 1.0 {
            return Err(Error::InvalidInput(format!("phi_s = {} violates the Feller condition phi_s > 1", self.phi_s)));
        }
        let scales = [("c", self.c), ("phi_x", self.phi_x), ("phi_d", self.phi_d), ("phi_m", self.phi_m), ("phi_r", self.phi_r)];
        if let Some((name, v)) = scales.iter().find(|(_, v)| *v <= 0.0) {
            return Err(Error::InvalidInput(format!("{name} = {v} must be positive")));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::InvalidInput(format!("rho = {} outside (-1, 1)", self.rho)));
        }
        Ok(())
    }

    fn check_arg(&self) -> Result<()> {
        if !(self.nu >= 0.0 && self.nu < 1.0 && self.phi_s > 0.0 && self.c > 0.0) {
            return Err(Error::InvalidInput(format!(
                "ARG parameters nu = {}, phi_s = {}, c = {} out of range",
                self.nu, self.phi_s, self.c
            )));
        }
        Ok(())
    }
}

/// Log density of the non-central gamma transition `sigma2_prev -> var`.
pub fn arg_transition_logdensity(spec: &ArgLrrSpec, var_prev: f64, var: f64) -> Result<f64> {
    spec.check_arg()?;
    if !(var_prev > 0.0 && var > 0.0) {
        return Err(Error::OutsideSupport(format!("variances must be positive, got {var_prev} and {var}")));
    }
    let (shape, scale) = (spec.phi_s, spec.c);
    let centrality = spec.nu * var_prev;
    if centrality == 0.0 {
        return Ok((shape - 1.0) * var.ln() - var / scale - shape * scale.ln() - ln_gamma(shape));
    }
    let order = shape - 1.0;
    let arg = 2.0 * (centrality * var).sqrt() / scale;
    Ok(0.5 * order * (var / centrality).ln() - scale.ln() - (var + centrality) / scale + log_bessel_i(order, arg))
}

/// Exact draw as a Poisson mixture of gammas.
pub fn arg_sample(spec: &ArgLrrSpec, var_prev: f64, rng: &mut dyn RngCore) -> Result<f64> {
    spec.check_arg()?;
    if !(var_prev > 0.0) {
        return Err(Error::OutsideSupport(format!("previous variance {var_prev} must be positive")));
    }
    let rate = spec.nu * var_prev / spec.c;
    let mixing = if rate > 0.0 {
        let poisson = Poisson::new(rate).map_err(|e| Error::InvalidInput(format!("Poisson rate {rate}: {e}")))?;
        poisson.sample(rng)
    } else {
        0.0
    };
    let gamma = Gamma::new(spec.phi_s + mixing, spec.c)
        .map_err(|e| Error::InvalidInput(format!("gamma shape {}: {e}", spec.phi_s + mixing)))?;
    loop {
        let v: f64 = gamma.sample(rng);
        if v > 0.0 {
            return Ok(v);
        }
    }
}

/// Log-normal `(m, v)` with the given mean and variance.
pub fn lognormal_moment_match(mean: f64, variance: f64) -> (f64, f64) {
    let v = (variance / (mean * mean)).ln_1p();
    (mean.ln() - 0.5 * v, v)
}

fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (2.0 * PI * var).ln() - 0.5 * r * r / var
}

#[derive(Debug, Clone)]
pub struct LrrModel<P = AffinePricing> {
    spec: ArgLrrSpec,
    pricing: P,
}

impl<P: PricingFunctions> LrrModel<P> {
    pub fn with_pricing(spec: ArgLrrSpec, pricing: P) -> Result<Self> {
        spec.validate()?;
        Ok(LrrModel { spec, pricing })
    }

    pub fn spec(&self) -> &ArgLrrSpec {
        &self.spec
    }

    fn lognormal_params(&self, var_prev: f64) -> (f64, f64) {
        let (m, v) = self.spec.arg_moments(var_prev);
        lognormal_moment_match(m, v)
    }
}

/// Long-run risk model with the affine pricing stored in the spec.
pub fn build_lrr_model(spec: ArgLrrSpec) -> Result<DensityDriven<LrrModel<AffinePricing>>> {
    let pricing = spec.pricing;
    Ok(DensityDriven(LrrModel::with_pricing(spec, pricing)?))
}

impl<P: PricingFunctions> DensityDrivenModel for LrrModel<P> {
    fn dims(&self) -> ModelDims {
        ModelDims { state: 2, noise: 2, obs: 4 }
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0, self.spec.long_run_variance()]
    }

    fn transition_logdensity(&self, prev: &[f64], cur: &[f64]) -> f64 {
        let s = &self.spec;
        let x_part = normal_logpdf(cur[0], s.rho * prev[0], s.phi_x * s.phi_x * prev[1]);
        match arg_transition_logdensity(s, prev[1], cur[1]) {
            Ok(v) => x_part + v,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn sample_transition(&self, prev: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let s = &self.spec;
        let e: f64 = StandardNormal.sample(rng);
        out[0] = s.rho * prev[0] + s.phi_x * prev[1].sqrt() * e;
        // The spec is validated at construction, so sampling cannot fail.
        out[1] = arg_sample(s, prev[1], rng).unwrap_or(f64::NAN);
    }

    fn proposal(&self, prev: &[f64]) -> GaussianProposal {
        let (m, v) = self.lognormal_params(prev[1]);
        GaussianProposal {
            mean: DVector::from_vec(vec![self.spec.rho * prev[0], m]),
            sqrt_cov: DMatrix::from_diagonal(&DVector::from_vec(vec![self.spec.phi_x * prev[1].sqrt(), v.sqrt()])),
        }
    }

    fn proposal_logdensity(&self, prev: &[f64], cur: &[f64]) -> f64 {
        if !(cur[1] > 0.0) {
            return f64::NEG_INFINITY;
        }
        let s = &self.spec;
        let (m, v) = self.lognormal_params(prev[1]);
        let log_var = cur[1].ln();
        normal_logpdf(cur[0], s.rho * prev[0], s.phi_x * s.phi_x * prev[1]) + normal_logpdf(log_var, m, v) - log_var
    }

    fn to_policy_coords(&self, s: &[f64], z: &mut [f64]) {
        z[0] = s[0];
        z[1] = s[1].ln();
    }

    fn from_policy_coords(&self, z: &[f64], s: &mut [f64]) {
        s[0] = z[0];
        s[1] = z[1].exp();
    }

    fn obs_logdensity(&self, _t: usize, prev: &[f64], cur: &[f64], y: &[f64]) -> f64 {
        let s = &self.spec;
        let (x_prev, var_prev) = (prev[0], prev[1]);
        let consumption_shock = y[0] - s.mu - x_prev;
        normal_logpdf(y[0], s.mu + x_prev, var_prev)
            + normal_logpdf(y[1], s.mu_d + s.big_phi * x_prev + s.phi_dc * consumption_shock, s.phi_d * s.phi_d * var_prev)
            + normal_logpdf(y[2], self.pricing.market_return(x_prev, var_prev, cur[0], cur[1], y[1]), s.phi_m * s.phi_m)
            + normal_logpdf(y[3], self.pricing.risk_free(cur[0], cur[1]), s.phi_r * s.phi_r)
    }

    fn sample_obs(&self, _t: usize, prev: &[f64], cur: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let s = &self.spec;
        let (x_prev, var_prev) = (prev[0], prev[1]);
        let sd = var_prev.sqrt();
        let u: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let dc = s.mu + x_prev + sd * u[0];
        let dd = s.mu_d + s.big_phi * x_prev + s.phi_dc * sd * u[0] + s.phi_d * sd * u[1];
        let m = self.pricing.market_return(x_prev, var_prev, cur[0], cur[1], dd) + s.phi_m * u[2];
        let r = self.pricing.risk_free(cur[0], cur[1]) + s.phi_r * u[3];
        vec![dc, dd, m, r]
    }
}
