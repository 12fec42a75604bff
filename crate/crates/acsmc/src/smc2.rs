//! Adaptive SMC² over a cloud of parameter particles, each carrying a
//! latent trajectory and a likelihood estimate from a nested filter.
//!
//! Temperatures are chosen by bisection on the cloud ESS. After each
//! reweight and resample step every particle refreshes its trajectory by
//! conditional controlled SMC and then takes particle marginal
//! Metropolis-Hastings moves with a Gaussian random walk in unconstrained
//! coordinates.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::annealing::{run_acsmc, run_conditional_csmc, AcsmcConfig, LadderOrigin, TemperatureLadder};
use crate::adp::AdpConfig;
use crate::error::{Error, Result};
use crate::linalg::cholesky;
use crate::model::{ControlledModel, Trajectory};
use crate::numeric::{logsumexp, normalize_log_weights};
use crate::parallel;
use crate::policy::QuadraticPolicy;
use crate::rng::substream;
use crate::smc::{constant_one_policy, ess, multinomial_resample, run_bpf, SmcOutput};

/// Maps parameter vectors to models.
pub trait ModelFamily: Send + Sync {
    type Model: ControlledModel;

    fn parameter_names(&self) -> Vec<String>;

    /// Fails for parameters outside the model's admissible region; such
    /// proposals are rejected.
    fn build(&self, theta: &[f64]) -> Result<Self::Model>;
}

/// One-dimensional prior law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum PriorComponent {
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Normal restricted to `[lower, upper]`; missing bounds are infinite.
    TruncatedNormal {
        mean: f64,
        sd: f64,
        #[serde(default)]
        lower: Option<f64>,
        #[serde(default)]
        upper: Option<f64>,
    },
    Uniform {
        lower: f64,
        upper: f64,
    },
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Numerically stable `log(1 / (1 + exp(-u)))`.
fn log_sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        -(-u).exp().ln_1p()
    } else {
        u - u.exp().ln_1p()
    }
}

impl PriorComponent {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            PriorComponent::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            PriorComponent::TruncatedNormal { lower, upper, .. } => {
                (lower.unwrap_or(f64::NEG_INFINITY), upper.unwrap_or(f64::INFINITY))
            }
            PriorComponent::Uniform { lower, upper } => (lower, upper),
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        let ok = match *self {
            PriorComponent::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            PriorComponent::TruncatedNormal { mean, sd, .. } => {
                mean.is_finite() && sd > 0.0 && sd.is_finite() && lo < hi && !lo.is_nan() && !hi.is_nan()
            }
            PriorComponent::Uniform { .. } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid prior component {self:?}")))
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let (lo, hi) = self.bounds();
        if !(x >= lo && x <= hi) {
            return f64::NEG_INFINITY;
        }
        match *self {
            PriorComponent::Normal { mean, sd } => normal_logpdf(x, mean, sd),
            PriorComponent::TruncatedNormal { mean, sd, .. } => {
                normal_logpdf(x, mean, sd) - truncation_mass(mean, sd, lo, hi).ln()
            }
            PriorComponent::Uniform { lower, upper } => -(upper - lower).ln(),
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        match *self {
            PriorComponent::Normal { mean, sd } => mean + sd * Distribution::<f64>::sample(&StandardNormal, rng),
            PriorComponent::TruncatedNormal { mean, sd, .. } => {
                let (lo, hi) = self.bounds();
                let std = Normal::standard();
                let (a, b) = ((lo - mean) / sd, (hi - mean) / sd);
                let u: f64 = rng.random();
                // Invert in whichever tail keeps the probabilities away from 1.
                let z = if a > 0.0 {
                    let (sa, sb) = (std.sf(a), std.sf(b));
                    -std.inverse_cdf(sb + u * (sa - sb))
                } else {
                    let (ca, cb) = (std.cdf(a), std.cdf(b));
                    std.inverse_cdf(ca + u * (cb - ca))
                };
                (mean + sd * z).clamp(lo, hi)
            }
            PriorComponent::Uniform { lower, upper } => lower + (upper - lower) * rng.random::<f64>(),
        }
    }

    /// Map to the real line: identity, log-shift or logit.
    pub fn to_unconstrained(&self, x: f64) -> f64 {
        match self.bounds() {
            (lo, hi) if lo.is_finite() && hi.is_finite() => logit((x - lo) / (hi - lo)),
            (lo, _) if lo.is_finite() => (x - lo).ln(),
            (_, hi) if hi.is_finite() => (hi - x).ln(),
            _ => x,
        }
    }

    pub fn from_unconstrained(&self, u: f64) -> f64 {
        match self.bounds() {
            (lo, hi) if lo.is_finite() && hi.is_finite() => lo + (hi - lo) * log_sigmoid(u).exp(),
            (lo, _) if lo.is_finite() => lo + u.exp(),
            (_, hi) if hi.is_finite() => hi - u.exp(),
            _ => u,
        }
    }

    /// `log |dx/du|`.
    pub fn log_jacobian(&self, u: f64) -> f64 {
        match self.bounds() {
            (lo, hi) if lo.is_finite() && hi.is_finite() => (hi - lo).ln() + log_sigmoid(u) + log_sigmoid(-u),
            (lo, hi) if lo.is_finite() || hi.is_finite() => u,
            _ => 0.0,
        }
    }
}

fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
}

fn truncation_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let std = Normal::standard();
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    // Use the upper tail when both bounds sit above the mean.
    if a > 0.0 {
        std.sf(a) - std.sf(b)
    } else {
        std.cdf(b) - std.cdf(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub name: String,
    #[serde(flatten)]
    pub dist: PriorComponent,
}

/// Product prior over named parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PriorEntry>", into = "Vec<PriorEntry>")]
pub struct Prior {
    entries: Vec<PriorEntry>,
}

impl TryFrom<Vec<PriorEntry>> for Prior {
    type Error = Error;

    fn try_from(entries: Vec<PriorEntry>) -> Result<Self> {
        Prior::new(entries)
    }
}

impl From<Prior> for Vec<PriorEntry> {
    fn from(prior: Prior) -> Self {
        prior.entries
    }
}

impl Prior {
    pub fn new(entries: Vec<PriorEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("prior has no parameters".into()));
        }
        for e in &entries {
            e.dist.validate()?;
        }
        Ok(Prior { entries })
    }

    pub fn entries(&self) -> &[PriorEntry] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        self.entries.iter().zip(theta).map(|(e, &x)| e.dist.log_density(x)).sum()
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.entries.iter().map(|e| e.dist.sample(rng)).collect()
    }

    pub fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        self.entries.iter().zip(theta).map(|(e, &x)| e.dist.to_unconstrained(x)).collect()
    }

    pub fn from_unconstrained(&self, u: &[f64]) -> Vec<f64> {
        self.entries.iter().zip(u).map(|(e, &v)| e.dist.from_unconstrained(v)).collect()
    }

    /// Prior log density of the unconstrained coordinates.
    pub fn log_density_unconstrained(&self, u: &[f64]) -> f64 {
        let theta = self.from_unconstrained(u);
        let jac: f64 = self.entries.iter().zip(u).map(|(e, &v)| e.dist.log_jacobian(v)).sum();
        self.log_density(&theta) + jac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateFilter {
    /// Controlled SMC with learned policies.
    Controlled,
    /// Bootstrap filter; no policy learning.
    Bootstrap,
}

/// Number of PMMH moves per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum MoveRule {
    Fixed { moves: usize },
    /// Move until the acceptance rates summed over moves reach `target`.
    CumulativeAcceptance { target: f64, max_moves: usize },
}

impl Default for MoveRule {
    fn default() -> Self {
        MoveRule::CumulativeAcceptance { target: 2.0, max_moves: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smc2Config {
    pub parameter_particles: usize,
    pub state_particles: usize,
    pub ess_fraction: f64,
    #[serde(default)]
    pub moves: MoveRule,
    /// Policies are learned only above this inverse temperature.
    pub policy_threshold: f64,
    /// Annealing stages above the threshold when learning a policy.
    pub policy_stages: usize,
    /// Multiplier on `2.38^2 / d` for the random-walk covariance.
    pub proposal_scale: f64,
    pub filter: StateFilter,
    pub adp: AdpConfig,
    pub seed: u64,
}

impl Smc2Config {
    pub fn new(parameter_particles: usize, state_particles: usize, ess_fraction: f64, seed: u64) -> Self {
        Smc2Config {
            parameter_particles,
            state_particles,
            ess_fraction,
            moves: MoveRule::default(),
            policy_threshold: 0.1,
            policy_stages: 2,
            proposal_scale: 1.0,
            filter: StateFilter::Controlled,
            adp: AdpConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parameter_particles < 2 || self.state_particles < 2 {
            return Err(Error::InvalidInput("SMC2 needs at least 2 parameter and 2 state particles".into()));
        }
        if !(self.ess_fraction > 0.0 && self.ess_fraction < 1.0) {
            return Err(Error::InvalidInput(format!("ESS fraction {} outside (0, 1)", self.ess_fraction)));
        }
        if !(self.policy_threshold > 0.0 && self.policy_threshold < 1.0) {
            return Err(Error::InvalidInput(format!("policy threshold {} outside (0, 1)", self.policy_threshold)));
        }
        if self.policy_stages == 0 {
            return Err(Error::InvalidInput("policy learning needs at least one stage".into()));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return Err(Error::InvalidInput("proposal scale must be positive".into()));
        }
        match self.moves {
            MoveRule::Fixed { moves } if moves == 0 => {
                Err(Error::InvalidInput("a fixed move rule needs at least one move".into()))
            }
            MoveRule::CumulativeAcceptance { target, max_moves } if !(target > 0.0) || max_moves == 0 => {
                Err(Error::InvalidInput("cumulative-acceptance rule needs a positive target and cap".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterParticle {
    pub theta: Vec<f64>,
    pub trajectory: Trajectory,
    /// `log p(y | theta, lambda)` estimate at the current temperature.
    pub log_likelihood: f64,
    /// `log g(y_t | s_{t-1}, s_t)` along the trajectory, `t = 1..T`.
    pub log_obs: Vec<f64>,
}

/// `(lambda - lambda_prev) * sum_t log g_t`.
pub fn incremental_logweight(log_obs: &[f64], lambda_prev: f64, lambda: f64) -> Result<f64> {
    if log_obs.is_empty() {
        return Err(Error::InvalidInput("particle has no observation cache".into()));
    }
    if lambda == lambda_prev {
        return Ok(0.0);
    }
    Ok((lambda - lambda_prev) * log_obs.iter().sum::<f64>())
}

fn cloud_ess(sums: &[f64], delta: f64) -> f64 {
    let logw: Vec<f64> = sums.iter().map(|s| delta * s).collect();
    let mut w = vec![0.0; logw.len()];
    let lse = normalize_log_weights(&logw, &mut w);
    if !lse.is_finite() {
        return 0.0;
    }
    ess(&w).unwrap_or(0.0)
}

/// Next inverse temperature: 1 if the ESS there stays above
/// `fraction * P`, otherwise the root of `ESS(lambda) = fraction * P` on
/// `(lambda_prev, 1)`. `sums[p]` is the particle's `sum_t log g_t`.
pub fn adapt_temperature(sums: &[f64], lambda_prev: f64, fraction: f64) -> Result<f64> {
    if sums.is_empty() {
        return Err(Error::InvalidInput("empty parameter cloud".into()));
    }
    if !(0.0..1.0).contains(&lambda_prev) {
        return Err(Error::InvalidInput(format!("previous temperature {lambda_prev} outside [0, 1)")));
    }
    let target = fraction * sums.len() as f64;
    if cloud_ess(sums, 1.0 - lambda_prev) >= target {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (lambda_prev, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let e = cloud_ess(sums, mid - lambda_prev);
        if (e - target).abs() <= 1e-10 * sums.len() as f64 {
            return Ok(mid);
        }
        if e >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    Ok(if mid > lambda_prev { mid } else { hi })
}

/// Log Metropolis-Hastings acceptance probability for a PMMH move.
/// `log_h_reverse` is `log h(theta | theta*)` and `log_h_forward` is
/// `log h(theta* | theta)`.
pub fn pmmh_log_acceptance(
    log_prior_new: f64,
    log_lik_new: f64,
    log_prior_old: f64,
    log_lik_old: f64,
    log_h_reverse: f64,
    log_h_forward: f64,
) -> f64 {
    if log_prior_new == f64::NEG_INFINITY || log_lik_new.is_nan() || log_lik_new == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let r = log_prior_new + log_lik_new + log_h_reverse - log_prior_old - log_lik_old - log_h_forward;
    if r.is_nan() {
        f64::NEG_INFINITY
    } else {
        r.min(0.0)
    }
}

/// Sum of `log g` along a trajectory.
fn observation_cache<M: ControlledModel>(model: &M, ys: &[DVector<f64>], traj: &Trajectory) -> Vec<f64> {
    (1..=ys.len())
        .map(|t| model.log_obs(t, &traj.states[t - 1], &traj.states[t], ys[t - 1].as_slice()))
        .collect()
}

/// Learns a policy for `model` at `lambda` and runs the matching filter,
/// returning its likelihood estimate, trajectory and the policy.
fn filter_at<M: ControlledModel>(
    model: &M,
    ys: &[DVector<f64>],
    lambda: f64,
    config: &Smc2Config,
    rng: &mut dyn RngCore,
) -> Result<(SmcOutput, QuadraticPolicy)> {
    let n = config.state_particles;
    if config.filter == StateFilter::Bootstrap || lambda <= config.policy_threshold {
        let out = run_bpf(model, ys, lambda, n, rng)?;
        return Ok((out, constant_one_policy(model, ys.len())));
    }
    let out = run_acsmc(model, ys, &policy_ladder(config, lambda)?, &AcsmcConfig { particles: n, adp: config.adp }, rng)?;
    Ok((out.output, out.policy))
}

fn learn_policy<M: ControlledModel>(
    model: &M,
    ys: &[DVector<f64>],
    lambda: f64,
    config: &Smc2Config,
    rng: &mut dyn RngCore,
) -> Result<QuadraticPolicy> {
    if config.filter == StateFilter::Bootstrap || lambda <= config.policy_threshold {
        return Ok(constant_one_policy(model, ys.len()));
    }
    let ladder = policy_ladder(config, lambda)?;
    let out = run_acsmc(model, ys, &ladder, &AcsmcConfig { particles: config.state_particles, adp: config.adp }, rng)?;
    Ok(out.policy)
}

/// `0` followed by `stages` evenly spaced values from the threshold to `lambda`.
fn policy_ladder(config: &Smc2Config, lambda: f64) -> Result<TemperatureLadder> {
    let start = config.policy_threshold;
    let k = config.policy_stages;
    let mut values = vec![0.0];
    if k == 1 {
        values.push(lambda);
    } else {
        values.extend((0..k).map(|i| if i + 1 == k { lambda } else { start + (lambda - start) * i as f64 / (k - 1) as f64 }));
    }
    values.dedup();
    TemperatureLadder::new(values, LadderOrigin::Fixed)
}

/// Gaussian random walk in unconstrained coordinates.
#[derive(Debug, Clone)]
pub struct RandomWalk {
    chol: DMatrix<f64>,
}

impl RandomWalk {
    /// `scale * 2.38^2 / d` times the cloud covariance, plus a small jitter.
    pub fn from_cloud(points: &[Vec<f64>], scale: f64) -> Result<Self> {
        let d = points.first().map(Vec::len).unwrap_or(0);
        let p = points.len() as f64;
        let mut mean = vec![0.0; d];
        for x in points {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / p;
            }
        }
        let mut cov = DMatrix::zeros(d, d);
        for x in points {
            for i in 0..d {
                for j in 0..d {
                    cov[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]) / p;
                }
            }
        }
        let factor = scale * 2.38 * 2.38 / d as f64;
        let cov = cov * factor + DMatrix::identity(d, d) * 1e-10;
        Ok(RandomWalk { chol: cholesky(&cov)? })
    }

    pub fn propose(&self, u: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let xi: Vec<f64> = (0..u.len()).map(|_| StandardNormal.sample(rng)).collect();
        u.iter()
            .enumerate()
            .map(|(i, &ui)| ui + (0..=i).map(|j| self.chol[(i, j)] * xi[j]).sum::<f64>())
            .collect()
    }
}

/// One PMMH move for `particle` at `lambda`. Returns whether the proposal
/// was accepted.
#[allow(clippy::too_many_arguments)]
pub fn pmmh_step<F: ModelFamily>(
    family: &F,
    prior: &Prior,
    ys: &[DVector<f64>],
    particle: &mut ParameterParticle,
    lambda: f64,
    walk: &RandomWalk,
    config: &Smc2Config,
    rng: &mut dyn RngCore,
) -> Result<bool> {
    let u = prior.to_unconstrained(&particle.theta);
    let u_new = walk.propose(&u, rng);
    let log_prior_new = prior.log_density_unconstrained(&u_new);
    if log_prior_new == f64::NEG_INFINITY {
        return Ok(false);
    }
    let theta_new = prior.from_unconstrained(&u_new);
    let model = match family.build(&theta_new) {
        Ok(m) => m,
        Err(e) if e.is_input_error() => return Ok(false),
        Err(e) => return Err(e),
    };
    let (out, _) = match filter_at(&model, ys, lambda, config, rng) {
        Ok(v) => v,
        // A proposal whose filter degenerates has zero estimated likelihood.
        Err(Error::DegenerateWeights { .. } | Error::ZeroWeights | Error::NonFiniteWeight { .. }) => return Ok(false),
        Err(Error::Stage { source, .. }) if matches!(*source, Error::DegenerateWeights { .. } | Error::NonFiniteWeight { .. } | Error::ZeroWeights) => {
            return Ok(false)
        }
        Err(e) => return Err(e),
    };
    let log_alpha = pmmh_log_acceptance(
        log_prior_new,
        out.log_likelihood,
        prior.log_density_unconstrained(&u),
        particle.log_likelihood,
        0.0,
        0.0,
    );
    let accept = log_alpha == 0.0 || rng.random::<f64>().ln() < log_alpha;
    if accept {
        particle.log_obs = observation_cache(&model, ys, &out.trajectory);
        particle.theta = theta_new;
        particle.trajectory = out.trajectory;
        particle.log_likelihood = out.log_likelihood;
    }
    Ok(accept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub lambda: f64,
    /// Cloud ESS at the chosen temperature, before resampling.
    pub ess: f64,
    /// Fraction of particles accepting, per move.
    pub acceptance_rates: Vec<f64>,
    pub log_evidence_increment: f64,
}

impl IterationDiagnostics {
    /// Accepted proposals over all proposals in this iteration.
    pub fn acceptance_rate(&self) -> f64 {
        if self.acceptance_rates.is_empty() {
            return 0.0;
        }
        self.acceptance_rates.iter().sum::<f64>() / self.acceptance_rates.len() as f64
    }
}

/// Serializable sampler state; everything needed to resume a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smc2State {
    pub iteration: usize,
    pub ladder: Vec<f64>,
    pub particles: Vec<ParameterParticle>,
    pub log_evidence: f64,
    pub diagnostics: Vec<IterationDiagnostics>,
}

impl Smc2State {
    pub fn lambda(&self) -> f64 {
        *self.ladder.last().expect("ladder starts at 0")
    }

    pub fn is_done(&self) -> bool {
        self.lambda() >= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

/// Equally weighted cloud summaries.
pub fn summarize(names: &[String], particles: &[ParameterParticle]) -> Vec<ParameterSummary> {
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut xs: Vec<f64> = particles.iter().map(|p| p.theta[k]).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            xs.sort_by(f64::total_cmp);
            let q = |p: f64| {
                let pos = p * (xs.len() - 1) as f64;
                let (i, frac) = (pos.floor() as usize, pos.fract());
                if i + 1 < xs.len() {
                    xs[i] * (1.0 - frac) + xs[i + 1] * frac
                } else {
                    xs[i]
                }
            };
            ParameterSummary { name: name.clone(), mean, std: var.sqrt(), q05: q(0.05), q50: q(0.5), q95: q(0.95) }
        })
        .collect()
}

// Substream purposes.
const INIT: u64 = 0;
const RESAMPLE: u64 = 1;
const REFRESH: u64 = 2;
const MOVE: u64 = 3;

/// Adaptive SMC² sampler; [`Smc2Sampler::step`] runs one annealing
/// iteration so callers can checkpoint between iterations.
pub struct Smc2Sampler<'a, F: ModelFamily> {
    family: &'a F,
    prior: &'a Prior,
    ys: &'a [DVector<f64>],
    config: Smc2Config,
    state: Smc2State,
}

impl<'a, F: ModelFamily> Smc2Sampler<'a, F> {
    /// Draws the initial cloud from the prior and the latent process.
    pub fn new(family: &'a F, prior: &'a Prior, ys: &'a [DVector<f64>], config: Smc2Config) -> Result<Self> {
        config.validate()?;
        Self::check_problem(family, prior, ys)?;
        let p = config.parameter_particles;
        let seed = config.seed;
        let draws = parallel::map_range_coarse(p, |i| {
            let mut rng = substream(seed, &[INIT, i as u64]);
            for _ in 0..1000 {
                let theta = prior.sample(&mut rng);
                let model = match family.build(&theta) {
                    Ok(m) => m,
                    Err(e) if e.is_input_error() => continue,
                    Err(e) => return Err(e),
                };
                let traj = sample_path(&model, ys.len(), &mut rng)?;
                let log_obs = observation_cache(&model, ys, &traj);
                if log_obs.iter().any(|v| v.is_nan()) {
                    continue;
                }
                return Ok(Some(ParameterParticle { theta, trajectory: traj, log_likelihood: 0.0, log_obs }));
            }
            Ok(None)
        });
        let mut particles = Vec::with_capacity(p);
        for d in draws {
            match d? {
                Some(particle) => particles.push(particle),
                None => {
                    return Err(Error::Initialization(
                        "no admissible parameter found in 1000 prior draws".into(),
                    ))
                }
            }
        }
        let state = Smc2State { iteration: 0, ladder: vec![0.0], particles, log_evidence: 0.0, diagnostics: Vec::new() };
        Ok(Smc2Sampler { family, prior, ys, config, state })
    }

    /// Continues from a saved state.
    pub fn resume(
        family: &'a F,
        prior: &'a Prior,
        ys: &'a [DVector<f64>],
        config: Smc2Config,
        state: Smc2State,
    ) -> Result<Self> {
        config.validate()?;
        Self::check_problem(family, prior, ys)?;
        if state.particles.len() != config.parameter_particles || state.ladder.first() != Some(&0.0) {
            return Err(Error::InvalidInput("saved state does not match the configuration".into()));
        }
        Ok(Smc2Sampler { family, prior, ys, config, state })
    }

    fn check_problem(family: &F, prior: &Prior, ys: &[DVector<f64>]) -> Result<()> {
        if ys.is_empty() {
            return Err(Error::InvalidInput("at least one observation is required".into()));
        }
        if family.parameter_names() != prior.names() {
            return Err(Error::InvalidInput(format!(
                "prior parameters {:?} do not match model parameters {:?}",
                prior.names(),
                family.parameter_names()
            )));
        }
        Ok(())
    }

    pub fn state(&self) -> &Smc2State {
        &self.state
    }

    pub fn into_state(self) -> Smc2State {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.is_done()
    }

    /// One annealing iteration. Returns `true` once `lambda = 1`.
    pub fn step(&mut self) -> Result<bool> {
        if self.is_done() {
            return Ok(true);
        }
        let (family, prior, ys, config) = (self.family, self.prior, self.ys, &self.config);
        let seed = config.seed;
        let iter = self.state.iteration as u64 + 1;
        let lambda_prev = self.state.lambda();
        let p = self.state.particles.len();

        let sums: Vec<f64> = self.state.particles.iter().map(|q| q.log_obs.iter().sum()).collect();
        let lambda = adapt_temperature(&sums, lambda_prev, config.ess_fraction)?;
        let logw = self
            .state
            .particles
            .iter()
            .map(|q| incremental_logweight(&q.log_obs, lambda_prev, lambda))
            .collect::<Result<Vec<_>>>()?;
        let increment = logsumexp(&logw) - (p as f64).ln();
        if !increment.is_finite() {
            return Err(Error::DegenerateWeights { t: self.state.iteration + 1 });
        }
        let mut weights = vec![0.0; p];
        normalize_log_weights(&logw, &mut weights);
        let cloud_ess = ess(&weights)?;
        let ancestors = multinomial_resample(&weights, p, &mut substream(seed, &[iter, RESAMPLE]))?;
        let resampled: Vec<ParameterParticle> = ancestors.iter().map(|&a| self.state.particles[a].clone()).collect();

        // Policy learning and conditional SMC refresh.
        let refreshed = parallel::map_range_coarse(p, |i| {
            let mut rng = substream(seed, &[iter, REFRESH, i as u64]);
            let mut particle = resampled[i].clone();
            let model = family.build(&particle.theta)?;
            let policy = learn_policy(&model, ys, lambda, config, &mut rng)?;
            let out = run_conditional_csmc(
                &model,
                ys,
                lambda,
                &policy,
                config.state_particles,
                &particle.trajectory,
                &mut rng,
            )?;
            particle.log_obs = observation_cache(&model, ys, &out.trajectory);
            particle.trajectory = out.trajectory;
            particle.log_likelihood = out.log_likelihood;
            Ok::<_, Error>(particle)
        });
        let mut particles = refreshed.into_iter().collect::<Result<Vec<_>>>()?;

        // PMMH moves with a walk frozen from the pre-move cloud.
        let points: Vec<Vec<f64>> = particles.iter().map(|q| prior.to_unconstrained(&q.theta)).collect();
        let walk = RandomWalk::from_cloud(&points, config.proposal_scale)?;
        let mut rates = Vec::new();
        loop {
            let k = rates.len() as u64;
            let moved = parallel::map_range_coarse(p, |i| {
                let mut rng = substream(seed, &[iter, MOVE, k, i as u64]);
                let mut particle = particles[i].clone();
                let accepted = pmmh_step(family, prior, ys, &mut particle, lambda, &walk, config, &mut rng)?;
                Ok::<_, Error>((particle, accepted))
            });
            let mut accepted = 0usize;
            for (slot, m) in particles.iter_mut().zip(moved) {
                let (particle, acc) = m?;
                *slot = particle;
                accepted += acc as usize;
            }
            rates.push(accepted as f64 / p as f64);
            let done = match config.moves {
                MoveRule::Fixed { moves } => rates.len() >= moves,
                MoveRule::CumulativeAcceptance { target, max_moves } => {
                    rates.iter().sum::<f64>() >= target || rates.len() >= max_moves
                }
            };
            if done {
                break;
            }
        }

        self.state.iteration += 1;
        self.state.ladder.push(lambda);
        self.state.particles = particles;
        self.state.log_evidence += increment;
        self.state.diagnostics.push(IterationDiagnostics {
            iteration: self.state.iteration,
            lambda,
            ess: cloud_ess,
            acceptance_rates: rates,
            log_evidence_increment: increment,
        });
        Ok(self.is_done())
    }

    /// Runs iterations until `lambda = 1`.
    pub fn run(mut self) -> Result<Smc2Output> {
        while !self.step()? {}
        Ok(self.finish())
    }

    pub fn finish(self) -> Smc2Output {
        let summary = summarize(&self.prior.names(), &self.state.particles);
        Smc2Output { log_evidence: self.state.log_evidence, summary, state: self.state }
    }
}

#[derive(Debug, Clone)]
pub struct Smc2Output {
    pub log_evidence: f64,
    pub summary: Vec<ParameterSummary>,
    pub state: Smc2State,
}

/// Convenience wrapper: builds a sampler and runs it to completion.
pub fn run_adaptive_smc2<F: ModelFamily>(
    family: &F,
    prior: &Prior,
    ys: &[DVector<f64>],
    config: Smc2Config,
) -> Result<Smc2Output> {
    Smc2Sampler::new(family, prior, ys, config)?.run()
}

fn sample_path<M: ControlledModel>(model: &M, horizon: usize, rng: &mut dyn RngCore) -> Result<Trajectory> {
    let dims = model.dims();
    let mut traj = Trajectory { states: Vec::with_capacity(horizon + 1), aux: Vec::with_capacity(horizon + 1) };
    for t in 0..=horizon {
        let mut s = vec![0.0; dims.state];
        let mut a = vec![0.0; model.aux_dim()];
        model.sample_prior(t, traj.states.last().map(Vec::as_slice), rng, &mut s, &mut a)?;
        traj.states.push(s);
        traj.aux.push(a);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn incremental_weight_examples() {
        assert_eq!(incremental_logweight(&[-1.0, -2.0], 0.3, 0.3).unwrap(), 0.0);
        assert!((incremental_logweight(&[-1.0, -2.0], 0.0, 0.5).unwrap() + 1.5).abs() < 1e-15);
        let one = incremental_logweight(&[-0.7, 3.1], 0.2, 0.25).unwrap();
        let two = incremental_logweight(&[-0.7, 3.1], 0.2, 0.3).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-14);
        assert!(incremental_logweight(&[], 0.0, 0.5).is_err());
    }

    #[test]
    fn identical_caches_jump_to_one() {
        assert_eq!(adapt_temperature(&[-5.0; 10], 0.2, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn two_particle_closed_form() {
        // ESS(l) = (1 + e^{-lc})^2 / (1 + e^{-2lc}) = 2 kappa; with r = e^{-lc},
        // (2 - 2 kappa) r^2 - ... solved as a quadratic in r.
        let (c, kappa) = (10.0_f64, 0.75_f64);
        let target = 2.0 * kappa;
        // (1 + r)^2 = target (1 + r^2)  =>  (1 - target) r^2 + 2 r + (1 - target) = 0
        let a = 1.0 - target;
        let disc = (4.0 - 4.0 * a * a).sqrt();
        let r = (-2.0 + disc) / (2.0 * a);
        let root = -r.ln() / c;
        let got = adapt_temperature(&[0.0, -c], 0.0, kappa).unwrap();
        assert!((got - root).abs() < 1e-8, "{got} vs {root}");
    }

    #[test]
    fn pmmh_acceptance_examples() {
        assert_eq!(pmmh_log_acceptance(-1.0, -3.0, -1.0, -3.0, 0.0, 0.0), 0.0);
        assert_eq!(pmmh_log_acceptance(f64::NEG_INFINITY, -3.0, -1.0, -3.0, 0.0, 0.0), f64::NEG_INFINITY);
        let a = pmmh_log_acceptance(0.2_f64.ln(), -10.0, 0.1_f64.ln(), -11.0, 0.0, 0.0);
        assert_eq!(a, 0.0);
        let b = pmmh_log_acceptance(0.1_f64.ln(), -12.0, 0.1_f64.ln(), -11.0, 0.0, 0.0);
        assert!((b + 1.0).abs() < 1e-14);
    }

    #[test]
    fn transforms_round_trip() {
        let comps = [
            PriorComponent::Normal { mean: 1.0, sd: 2.0 },
            PriorComponent::TruncatedNormal { mean: 8.0, sd: 2.0, lower: Some(0.0), upper: None },
            PriorComponent::TruncatedNormal { mean: 0.0, sd: 1.0, lower: None, upper: Some(0.5) },
            PriorComponent::Uniform { lower: -1.0, upper: 3.0 },
        ];
        let xs = [0.3, 5.0, -0.2, 2.5];
        for (c, &x) in comps.iter().zip(&xs) {
            let u = c.to_unconstrained(x);
            assert!((c.from_unconstrained(u) - x).abs() < 1e-12);
            // Jacobian against a central difference.
            let h = 1e-6;
            let num = (c.from_unconstrained(u + h) - c.from_unconstrained(u - h)) / (2.0 * h);
            assert!((c.log_jacobian(u) - num.abs().ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn truncated_normal_normalized() {
        let c = PriorComponent::TruncatedNormal { mean: 2.0, sd: 0.5, lower: Some(0.0), upper: Some(2.5) };
        let n = 200_000;
        let h = 2.5 / n as f64;
        let total: f64 = (0..n).map(|i| c.log_density((i as f64 + 0.5) * h).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn uniform_samples_stay_inside() {
        let c = PriorComponent::Uniform { lower: 0.0, upper: 1.0 };
        let mut rng = from_seed(4);
        assert!((0..10_000).all(|_| {
            let x = c.sample(&mut rng);
            c.log_density(x).is_finite()
        }));
    }

    #[test]
    fn truncated_sampler_respects_bounds() {
        let c = PriorComponent::TruncatedNormal { mean: 8.0, sd: 2.0, lower: Some(0.0), upper: None };
        let mut rng = from_seed(5);
        let xs: Vec<f64> = (0..20_000).map(|_| c.sample(&mut rng)).collect();
        assert!(xs.iter().all(|&x| x >= 0.0));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 8.0).abs() < 0.1);
    }
}
