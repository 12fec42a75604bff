//! Run configuration, read from TOML or JSON.

use std::fs;
use std::path::{Path, PathBuf};

use acsmc::adp::AdpConfig;
use acsmc::kalman::LinearGaussianSpec;
use acsmc::models::{ArgLrrSpec, QuadraticSsmSpec};
use acsmc::smc2::{MoveRule, Prior, Smc2Config, StateFilter};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub likelihood: Option<LikelihoodConfig>,
    #[serde(default)]
    pub infer: Option<InferConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Lgssm(LinearGaussianSpec),
    Quadratic(QuadraticSsmSpec),
    Lrr(ArgLrrSpec),
}

/// Observations come from a CSV file or are simulated from the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum DataConfig {
    File {
        path: PathBuf,
    },
    Simulated {
        horizon: usize,
        /// Observation noise sd as a fraction of each series' sample sd;
        /// replaces the model's observation covariance.
        #[serde(default)]
        measurement_error: Option<f64>,
        /// Defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bpf,
    /// Controlled SMC with a policy refined by repeated ADP passes at a
    /// fixed temperature.
    Csmc,
    Acsmc,
    Kalman,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bpf => "bpf",
            Method::Csmc => "csmc",
            Method::Acsmc => "acsmc",
            Method::Kalman => "kalman",
        }
    }
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn four() -> usize {
    4
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub method: Method,
    #[serde(default)]
    pub particles: usize,
    #[serde(default = "one")]
    pub reps: usize,
    #[serde(default = "unit")]
    pub lambda: f64,
    /// Explicit annealing ladder for `acsmc`; otherwise `ladder_steps`
    /// equal steps from 0 to `lambda`.
    #[serde(default)]
    pub ladder: Option<Vec<f64>>,
    #[serde(default = "four")]
    pub ladder_steps: usize,
    /// ADP passes for `csmc`.
    #[serde(default = "three")]
    pub policy_iterations: usize,
    #[serde(default)]
    pub adp: AdpConfig,
    #[serde(default)]
    pub baseline: Option<Baseline>,
}

/// Second method run on the same data for a variance ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    pub method: Method,
    pub particles: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferConfig {
    /// Free parameters; the entry format depends on the model kind.
    pub parameters: serde_json::Value,
    pub prior: Prior,
    pub parameter_particles: usize,
    pub state_particles: usize,
    #[serde(default = "half")]
    pub ess_fraction: f64,
    #[serde(default)]
    pub moves: MoveRule,
    #[serde(default = "tenth")]
    pub policy_threshold: f64,
    #[serde(default = "two")]
    pub policy_stages: usize,
    #[serde(default = "unit")]
    pub proposal_scale: f64,
    #[serde(default = "controlled")]
    pub filter: StateFilter,
    #[serde(default)]
    pub adp: AdpConfig,
    /// Written after every iteration when set.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

fn half() -> f64 {
    0.5
}

fn tenth() -> f64 {
    0.1
}

fn two() -> usize {
    2
}

fn controlled() -> StateFilter {
    StateFilter::Controlled
}

impl InferConfig {
    pub fn sampler(&self, seed: u64) -> Smc2Config {
        Smc2Config {
            parameter_particles: self.parameter_particles,
            state_particles: self.state_particles,
            ess_fraction: self.ess_fraction,
            moves: self.moves,
            policy_threshold: self.policy_threshold,
            policy_stages: self.policy_stages,
            proposal_scale: self.proposal_scale,
            filter: self.filter,
            adp: self.adp,
            seed,
        }
    }
}

impl Config {
    /// Reads `.toml` files as TOML and anything else as JSON. Relative
    /// data paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = if path.extension().is_some_and(|e| e == "toml") {
            let parsed: toml::Value =
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::to_value(parsed).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        let mut config: Config =
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let DataConfig::File { path: data } = &mut config.data {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(config)
    }

    /// Hex digest of the effective configuration and, for file data, the
    /// data bytes.
    pub fn hash(&self) -> Result<String, CliError> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("configuration serializes"));
        if let DataConfig::File { path } = &self.data {
            let bytes =
                fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            h.update(&bytes);
        }
        Ok(h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
    }
}
