//! Particle system machinery, the bootstrap particle filter and controlled
//! SMC with twisted proposals.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{ControlledModel, Trajectory};
use crate::numeric::normalize_log_weights;
use crate::parallel;
use crate::policy::QuadraticPolicy;

/// Effective sample size `1 / sum(W^2)` of normalized weights.
pub fn ess(weights: &[f64]) -> Result<f64> {
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::ZeroWeights);
    }
    let sq: f64 = weights.iter().map(|w| (w / sum) * (w / sum)).sum();
    Ok(1.0 / sq)
}

/// `n` independent categorical draws from `weights`.
pub fn multinomial_resample<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::ZeroWeights);
    }
    let mut cum = Vec::with_capacity(weights.len());
    let mut total = 0.0;
    for &w in weights {
        total += w;
        cum.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    Ok((0..n)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            cum.partition_point(|&c| c <= u).min(last)
        })
        .collect())
}

/// Ancestral path `l_{0:T}` ending at `terminal`, where `ancestors[t-1][n]`
/// is the parent at time `t - 1` of particle `n` at time `t`.
pub fn trace_lineage(ancestors: &[Vec<usize>], terminal: usize) -> Result<Vec<usize>> {
    let horizon = ancestors.len();
    let mut path = vec![0; horizon + 1];
    path[horizon] = terminal;
    for t in (1..=horizon).rev() {
        let row = &ancestors[t - 1];
        let cur = path[t];
        if cur >= row.len() {
            return Err(Error::InvalidInput(format!(
                "lineage index {cur} out of range at t = {t} ({} particles)",
                row.len()
            )));
        }
        path[t - 1] = row[cur];
    }
    if let Some(first) = ancestors.first() {
        if path[0] >= first.len() {
            return Err(Error::InvalidInput(format!("lineage index {} out of range at t = 0", path[0])));
        }
    }
    Ok(path)
}

/// All particles of one filter pass, stored densely per time step.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    pub n: usize,
    pub state_dim: usize,
    pub aux_dim: usize,
    /// `states[t]` holds `n * state_dim` values.
    pub states: Vec<Vec<f64>>,
    pub aux: Vec<Vec<f64>>,
    /// `ancestors[t - 1][i]`: parent at `t - 1` of particle `i` at `t`.
    pub ancestors: Vec<Vec<usize>>,
    pub log_weights: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    /// `log(mean of unnormalized weights)` per step.
    pub log_mean_weights: Vec<f64>,
}

impl ParticleSystem {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    pub fn state(&self, t: usize, i: usize) -> &[f64] {
        &self.states[t][i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn aux(&self, t: usize, i: usize) -> &[f64] {
        &self.aux[t][i * self.aux_dim..(i + 1) * self.aux_dim]
    }

    /// State of the parent of particle `i` at time `t >= 1`.
    pub fn parent_state(&self, t: usize, i: usize) -> &[f64] {
        self.state(t - 1, self.ancestors[t - 1][i])
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_mean_weights.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct SmcOutput {
    pub system: ParticleSystem,
    pub log_likelihood: f64,
    pub trajectory: Trajectory,
    pub lineage: Vec<usize>,
    pub ess: Vec<f64>,
}

impl SmcOutput {
    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_inputs<M: ControlledModel>(model: &M, ys: &[DVector<f64>], lambda: f64, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("number of particles must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda = {lambda} outside [0, 1]")));
    }
    if ys.is_empty() {
        return Err(Error::InvalidInput("at least one observation is required".into()));
    }
    let dy = model.dims().obs;
    for (t, y) in ys.iter().enumerate() {
        if y.len() != dy {
            return Err(Error::Dimension(format!("observation {} has length {}, expected {dy}", t + 1, y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("observation {} is not finite", t + 1)));
        }
    }
    Ok(())
}

/// Prepares every time step of `policy` for `model`.
pub fn prepare_policy<M: ControlledModel>(model: &M, policy: &QuadraticPolicy, horizon: usize) -> Result<Vec<M::Step>> {
    if policy.steps.len() != horizon + 1 {
        return Err(Error::Dimension(format!(
            "policy covers {} steps, data needs {}",
            policy.steps.len(),
            horizon + 1
        )));
    }
    policy.steps.iter().enumerate().map(|(t, c)| model.prepare(t, c)).collect()
}

/// The constant-one policy for `model` over `horizon` steps.
pub fn constant_one_policy<M: ControlledModel>(model: &M, horizon: usize) -> QuadraticPolicy {
    QuadraticPolicy::constant_one((0..=horizon).map(|t| model.policy_shape(t)))
}

/// Shared filter loop. Without `steps` it runs the bootstrap filter; with
/// `reference` it keeps that path in slot 0 (conditional SMC).
pub(crate) fn run_filter<M: ControlledModel, R: Rng + ?Sized>(
    model: &M,
    ys: &[DVector<f64>],
    lambda: f64,
    n: usize,
    steps: Option<&[M::Step]>,
    reference: Option<&Trajectory>,
    rng: &mut R,
) -> Result<SmcOutput> {
    check_inputs(model, ys, lambda, n)?;
    let horizon = ys.len();
    let d = model.dims().state;
    let da = model.aux_dim();
    if let Some(r) = reference {
        if r.states.len() != horizon + 1
            || r.aux.len() != horizon + 1
            || r.states.iter().any(|s| s.len() != d)
            || r.aux.iter().any(|a| a.len() != da)
        {
            return Err(Error::Dimension("reference trajectory does not match model and data".into()));
        }
    }
    if let Some(s) = steps {
        if s.len() != horizon + 1 {
            return Err(Error::Dimension("prepared policy has the wrong horizon".into()));
        }
    }

    let mut sys = ParticleSystem {
        n,
        state_dim: d,
        aux_dim: da,
        states: Vec::with_capacity(horizon + 1),
        aux: Vec::with_capacity(horizon + 1),
        ancestors: Vec::with_capacity(horizon),
        log_weights: Vec::with_capacity(horizon + 1),
        weights: Vec::with_capacity(horizon + 1),
        log_mean_weights: Vec::with_capacity(horizon + 1),
    };
    let mut ess_trace = Vec::with_capacity(horizon + 1);
    let log_n = (n as f64).ln();

    for t in 0..=horizon {
        let ancestors = if t == 0 {
            Vec::new()
        } else {
            let mut a = multinomial_resample(&sys.weights[t - 1], n, rng)?;
            if reference.is_some() {
                a[0] = 0;
            }
            a
        };
        let k = model.draw_dim(t);
        let draws: Vec<f64> = (0..n * k).map(|_| StandardNormal.sample(rng)).collect();
        let mut states = vec![0.0; n * d];
        let mut aux = vec![0.0; n * da];
        let mut logw = vec![0.0; n];
        let prev_states = if t == 0 { None } else { Some(&sys.states[t - 1]) };
        let y = if t == 0 { None } else { Some(ys[t - 1].as_slice()) };

        parallel::for_each_particle(&mut states, d, &mut aux, da, &mut logw, |i, s, a, lw| {
            let prev = prev_states.map(|ps| &ps[ancestors[i] * d..(ancestors[i] + 1) * d]);
            let xi = &draws[i * k..(i + 1) * k];
            match (reference, steps) {
                (Some(r), _) if i == 0 => {
                    s.copy_from_slice(&r.states[t]);
                    a.copy_from_slice(&r.aux[t]);
                }
                (_, Some(st)) => model.propagate(&st[t], prev, xi, s, a)?,
                (_, None) => model.propagate_base(t, prev, xi, s, a)?,
            }
            let mut w = model.log_weight(t, prev, s, y, lambda);
            if let Some(st) = steps {
                if t == 0 {
                    w += model.log_expectation(&st[0], None)?;
                }
                if t < horizon {
                    w += model.log_expectation(&st[t + 1], Some(s))?;
                }
                w -= model.log_policy(&st[t], prev, s, a);
            }
            if w.is_nan() || w == f64::INFINITY {
                return Err(Error::NonFiniteWeight { t, n: i });
            }
            *lw = w;
            Ok(())
        })?;

        if reference.is_some() && logw[0] == f64::NEG_INFINITY {
            return Err(Error::ReferenceIncompatible { t });
        }
        let mut w = vec![0.0; n];
        let lse = normalize_log_weights(&logw, &mut w);
        if lse == f64::NEG_INFINITY {
            return Err(Error::DegenerateWeights { t });
        }
        ess_trace.push(ess(&w)?);
        sys.log_mean_weights.push(lse - log_n);
        sys.states.push(states);
        sys.aux.push(aux);
        if t > 0 {
            sys.ancestors.push(ancestors);
        }
        sys.log_weights.push(logw);
        sys.weights.push(w);
    }

    let terminal = multinomial_resample(&sys.weights[horizon], 1, rng)?[0];
    let lineage = trace_lineage(&sys.ancestors, terminal)?;
    let trajectory = Trajectory {
        states: lineage.iter().enumerate().map(|(t, &i)| sys.state(t, i).to_vec()).collect(),
        aux: lineage.iter().enumerate().map(|(t, &i)| sys.aux(t, i).to_vec()).collect(),
    };
    let log_likelihood = sys.log_likelihood();
    Ok(SmcOutput { system: sys, log_likelihood, trajectory, lineage, ess: ess_trace })
}

/// Bootstrap particle filter at inverse temperature `lambda`.
pub fn run_bpf<M: ControlledModel, R: Rng + ?Sized>(
    model: &M,
    ys: &[DVector<f64>],
    lambda: f64,
    n: usize,
    rng: &mut R,
) -> Result<SmcOutput> {
    run_filter(model, ys, lambda, n, None, None, rng)
}

/// Controlled SMC with the twisted proposals of `policy`.
pub fn run_controlled_smc<M: ControlledModel, R: Rng + ?Sized>(
    model: &M,
    ys: &[DVector<f64>],
    lambda: f64,
    policy: &QuadraticPolicy,
    n: usize,
    rng: &mut R,
) -> Result<SmcOutput> {
    let steps = prepare_policy(model, policy, ys.len())?;
    run_filter(model, ys, lambda, n, Some(&steps), None, rng)
}
