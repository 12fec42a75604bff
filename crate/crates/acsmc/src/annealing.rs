//! Annealed controlled SMC and the conditional controlled SMC kernel.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adp::{adp_backward_pass, AdpConfig};
use crate::error::{Error, Result};
use crate::model::{ControlledModel, Trajectory};
use crate::policy::QuadraticPolicy;
use crate::smc::{constant_one_policy, prepare_policy, run_bpf, run_controlled_smc, run_filter, SmcOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadderOrigin {
    Fixed,
    Adaptive,
}

/// Increasing inverse temperatures starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureLadder {
    values: Vec<f64>,
    origin: LadderOrigin,
}

impl TemperatureLadder {
    pub fn new(values: Vec<f64>, origin: LadderOrigin) -> Result<Self> {
        if values.first() != Some(&0.0) {
            return Err(Error::InvalidInput("temperature ladder must start at 0".into()));
        }
        if values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("temperature ladder must be strictly increasing".into()));
        }
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidInput("temperatures must lie in [0, 1]".into()));
        }
        Ok(TemperatureLadder { values, origin })
    }

    /// `0, 1/steps, ..., 1`.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidInput("a uniform ladder needs at least one step".into()));
        }
        let values = (0..=steps).map(|i| if i == steps { 1.0 } else { i as f64 / steps as f64 }).collect();
        Self::new(values, LadderOrigin::Fixed)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn origin(&self) -> LadderOrigin {
        self.origin
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("ladder is never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcsmcConfig {
    /// Particles per filter run.
    pub particles: usize,
    pub adp: AdpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub stage: usize,
    pub lambda: f64,
    pub min_ess: f64,
    pub log_likelihood: f64,
    pub min_learning_rate: f64,
    pub clipped_targets: usize,
}

#[derive(Debug, Clone)]
pub struct AcsmcOutput {
    pub policy: QuadraticPolicy,
    pub output: SmcOutput,
    pub stages: Vec<StageDiagnostics>,
}

fn stage_error(stage: usize, lambda: f64) -> impl FnOnce(Error) -> Error {
    move |e| Error::Stage { stage, lambda, source: Box::new(e) }
}

/// Runs the annealing stages of `ladder`. Stage 0 is an uncontrolled
/// filter at `lambda_0 = 0`; each later stage refines the policy by one ADP
/// pass and then runs controlled SMC at the new temperature.
pub fn run_acsmc<M: ControlledModel, R: Rng + ?Sized>(
    model: &M,
    ys: &[DVector<f64>],
    ladder: &TemperatureLadder,
    config: &AcsmcConfig,
    rng: &mut R,
) -> Result<AcsmcOutput> {
    let lambdas = ladder.values();
    let mut policy = constant_one_policy(model, ys.len());
    let mut output = run_bpf(model, ys, lambdas[0], config.particles, rng).map_err(stage_error(0, lambdas[0]))?;
    let mut stages = vec![StageDiagnostics {
        stage: 0,
        lambda: lambdas[0],
        min_ess: output.min_ess(),
        log_likelihood: output.log_likelihood,
        min_learning_rate: 1.0,
        clipped_targets: 0,
    }];
    for (i, w) in lambdas.windows(2).enumerate() {
        let stage = i + 1;
        let (prev, next) = (w[0], w[1]);
        let adp = adp_backward_pass(model, ys, prev, next, &policy, &output, &config.adp)
            .map_err(stage_error(stage, next))?;
        policy = adp.refined;
        output = run_controlled_smc(model, ys, next, &policy, config.particles, rng)
            .map_err(stage_error(stage, next))?;
        stages.push(StageDiagnostics {
            stage,
            lambda: next,
            min_ess: output.min_ess(),
            log_likelihood: output.log_likelihood,
            min_learning_rate: adp.learning_rates.iter().copied().fold(1.0, f64::min),
            clipped_targets: adp.clipped_targets,
        });
    }
    Ok(AcsmcOutput { policy, output, stages })
}

/// Conditional controlled SMC: `reference` occupies particle slot 0 at
/// every time and survives every resampling step. The returned
/// trajectory is drawn from the final weights.
pub fn run_conditional_csmc<M: ControlledModel, R: Rng + ?Sized>(
    model: &M,
    ys: &[DVector<f64>],
    lambda: f64,
    policy: &QuadraticPolicy,
    n: usize,
    reference: &Trajectory,
    rng: &mut R,
) -> Result<SmcOutput> {
    let steps = prepare_policy(model, policy, ys.len())?;
    run_filter(model, ys, lambda, n, Some(&steps), Some(reference), rng)
}
