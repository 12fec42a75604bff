//! Approximate dynamic programming: one backward regression pass that
//! refines a policy from the output of a filter run under it.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ControlledModel;
use crate::parallel;
use crate::policy::{fit_logquadratic, refine_step, QuadCoeffs, QuadraticPolicy, RidgeConfig, DEFAULT_ALPHA};
use crate::smc::SmcOutput;

/// Regression targets are clipped to this magnitude.
pub const TARGET_CLIP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdpConfig {
    pub ridge: RidgeConfig,
    /// Margin of the positive-definiteness guard on refinements.
    pub alpha: f64,
}

impl Default for AdpConfig {
    fn default() -> Self {
        AdpConfig { ridge: RidgeConfig::default(), alpha: DEFAULT_ALPHA }
    }
}

#[derive(Debug, Clone)]
pub struct AdpOutput {
    /// Fitted increment `phi` before damping.
    pub increment: QuadraticPolicy,
    /// `psi + kappa_t phi_t` per time step.
    pub refined: QuadraticPolicy,
    pub learning_rates: Vec<f64>,
    /// Number of regression targets that hit the clip bound.
    pub clipped_targets: usize,
}

/// Fits the increment `phi` so that `psi * phi` approximates the optimal
/// policy at `lambda_new`, using the particles of `output` (a filter run
/// under `policy` at `lambda_prev`) as support.
///
/// The guard of [`refine_step`] is applied at each time step as the pass
/// moves backwards, and the guarded policy is used for the conditional
/// expectations of the next step back, so the returned `refined` policy is
/// exactly `constrained_refine(policy, increment, alpha)`.
pub fn adp_backward_pass<M: ControlledModel>(
    model: &M,
    ys: &[DVector<f64>],
    lambda_prev: f64,
    lambda_new: f64,
    policy: &QuadraticPolicy,
    output: &SmcOutput,
    config: &AdpConfig,
) -> Result<AdpOutput> {
    if !(0.0..=1.0).contains(&lambda_prev) || !(0.0..=1.0).contains(&lambda_new) {
        return Err(Error::InvalidInput(format!(
            "temperatures ({lambda_prev}, {lambda_new}) outside [0, 1]"
        )));
    }
    let horizon = ys.len();
    let sys = &output.system;
    if sys.horizon() != horizon || policy.steps.len() != horizon + 1 {
        return Err(Error::Dimension("filter output, policy and data horizons differ".into()));
    }
    let n = sys.n;
    let mut increment: Vec<Option<QuadCoeffs>> = vec![None; horizon + 1];
    let mut refined: Vec<Option<QuadCoeffs>> = vec![None; horizon + 1];
    let mut rates = vec![1.0; horizon + 1];
    let mut clipped = 0;
    let mut next_step: Option<M::Step> = None;

    for t in (0..=horizon).rev() {
        let current = &policy.steps[t];
        if !model.is_controlled(t) {
            let (m, k) = current.shape();
            increment[t] = Some(QuadCoeffs::zeros(m, k));
            refined[t] = Some(current.clone());
            next_step = Some(model.prepare(t, current)?);
            continue;
        }
        let step = model.prepare(t, current)?;
        let (rm, rn) = model.regression_shape(t);
        let y = if t == 0 { None } else { Some(ys[t - 1].as_slice()) };
        let initial_term = if t == 0 { model.log_expectation(&step, None)? } else { 0.0 };
        let next = next_step.as_ref();

        let points = parallel::map_range(n, |i| -> Result<(f64, Vec<f64>, Vec<f64>)> {
            let prev = if t == 0 { None } else { Some(sys.parent_state(t, i)) };
            let cur = sys.state(t, i);
            let aux = sys.aux(t, i);
            let mut target = model.log_weight(t, prev, cur, y, lambda_new) + initial_term
                - model.log_policy(&step, prev, cur, aux);
            if let Some(ns) = next {
                target += model.log_expectation(ns, Some(cur))?;
            }
            if !target.is_finite() {
                return Err(Error::NonFiniteTarget { t, n: i });
            }
            let mut z = vec![0.0; rn];
            let mut zp = vec![0.0; rm];
            model.regression_point(t, prev, cur, aux, &mut z, &mut zp);
            Ok((target, z, zp))
        });

        let mut targets = Vec::with_capacity(n);
        let mut zs = Vec::with_capacity(n * rn);
        let mut zps = Vec::with_capacity(n * rm);
        for p in points {
            let (target, z, zp) = p?;
            if target.abs() > TARGET_CLIP {
                clipped += 1;
            }
            targets.push(target.clamp(-TARGET_CLIP, TARGET_CLIP));
            zs.extend(z);
            zps.extend(zp);
        }
        let fitted = fit_logquadratic(rm, rn, &zs, &zps, &targets, &config.ridge)?;
        let phi = model.lift(t, &fitted)?;
        let (new_coeffs, kappa) = refine_step(t, current, &phi, config.alpha)?;
        next_step = Some(model.prepare(t, &new_coeffs)?);
        rates[t] = kappa;
        increment[t] = Some(phi);
        refined[t] = Some(new_coeffs);
    }

    let unwrap_all = |v: Vec<Option<QuadCoeffs>>| QuadraticPolicy {
        steps: v.into_iter().map(|c| c.expect("every time step is visited")).collect(),
    };
    Ok(AdpOutput {
        increment: unwrap_all(increment),
        refined: unwrap_all(refined),
        learning_rates: rates,
        clipped_targets: clipped,
    })
}
