use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use acsmc::adp::adp_backward_pass;
use acsmc::annealing::{run_acsmc, AcsmcConfig, LadderOrigin, TemperatureLadder};
use acsmc::kalman::kalman_loglik;
use acsmc::model::ControlledModel;
use acsmc::models::{
    build_lrr_model, build_quadratic_ssm, lgssm, LgssmFamily, LgssmParam, LrrFamily, QuadraticFamily, QuadraticParam,
};
use acsmc::parallel::map_range_coarse;
use acsmc::rng::substream;
use acsmc::smc::{constant_one_policy, run_bpf, run_controlled_smc};
use acsmc::smc2::{ModelFamily, Prior, Smc2Config, Smc2Sampler, Smc2State};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Config, DataConfig, LikelihoodConfig, Method, ModelConfig};
use crate::data::{prepare, write_dataset};
use crate::error::{io_error, CliError};

/// First line of every CSV output.
pub fn csv_header(hash: &str, seed: u64) -> String {
    format!("# config_hash={hash}, seed={seed}")
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| io_error("write", path, e)),
        None => std::io::stdout().write_all(bytes).map_err(|e| CliError::Io(format!("cannot write output: {e}"))),
    }
}

pub fn simulate_cmd(config: &Config, out: Option<&Path>, with_states: bool) -> Result<(), CliError> {
    if !matches!(config.data, DataConfig::Simulated { .. }) {
        return Err(CliError::Config("`simulate` needs a simulated data section (horizon = ...)".into()));
    }
    let (_, data) = prepare(config)?;
    let mut buf = Vec::new();
    write_dataset(&data, &csv_header(&config.hash()?, config.seed), with_states, &mut buf)?;
    write_output(out, &buf)
}

fn ladder(cfg: &LikelihoodConfig) -> Result<TemperatureLadder, CliError> {
    let ladder = match &cfg.ladder {
        Some(values) => TemperatureLadder::new(values.clone(), LadderOrigin::Fixed)?,
        None => {
            let uniform = TemperatureLadder::uniform(cfg.ladder_steps)?;
            let values = uniform.values().iter().map(|v| v * cfg.lambda).collect();
            TemperatureLadder::new(values, LadderOrigin::Fixed)?
        }
    };
    Ok(ladder)
}

fn estimate<M: ControlledModel>(
    model: &M,
    ys: &[DVector<f64>],
    cfg: &LikelihoodConfig,
    method: Method,
    particles: usize,
    seed: u64,
    rep: usize,
) -> acsmc::Result<f64> {
    let mut rng = substream(seed, &[method as u64, rep as u64]);
    match method {
        Method::Bpf => Ok(run_bpf(model, ys, cfg.lambda, particles, &mut rng)?.log_likelihood),
        Method::Acsmc => {
            let ladder = ladder(cfg).map_err(|e| match e {
                CliError::Engine(e) => e,
                other => acsmc::Error::InvalidInput(other.to_string()),
            })?;
            let config = AcsmcConfig { particles, adp: cfg.adp };
            Ok(run_acsmc(model, ys, &ladder, &config, &mut rng)?.output.log_likelihood)
        }
        Method::Csmc => {
            let mut policy = constant_one_policy(model, ys.len());
            let mut output = run_bpf(model, ys, cfg.lambda, particles, &mut rng)?;
            for _ in 0..cfg.policy_iterations {
                policy = adp_backward_pass(model, ys, cfg.lambda, cfg.lambda, &policy, &output, &cfg.adp)?.refined;
                output = run_controlled_smc(model, ys, cfg.lambda, &policy, particles, &mut rng)?;
            }
            Ok(output.log_likelihood)
        }
        Method::Kalman => unreachable!("handled before replication"),
    }
}

fn replicate<M: ControlledModel>(
    model: &M,
    ys: &[DVector<f64>],
    cfg: &LikelihoodConfig,
    method: Method,
    particles: usize,
    seed: u64,
) -> Result<Vec<f64>, CliError> {
    if particles == 0 {
        return Err(CliError::Config(format!("method {} needs particles >= 1", method.name())));
    }
    let results = map_range_coarse(cfg.reps, |rep| estimate(model, ys, cfg, method, particles, seed, rep));
    Ok(results.into_iter().collect::<acsmc::Result<Vec<_>>>()?)
}

#[derive(Debug, Serialize)]
struct MethodSummary {
    method: &'static str,
    particles: usize,
    reps: usize,
    mean: f64,
    variance: Option<f64>,
    seconds: f64,
}

fn summarize(method: Method, particles: usize, values: &[f64], seconds: f64) -> MethodSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = (values.len() > 1).then(|| values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0));
    MethodSummary { method: method.name(), particles, reps: values.len(), mean, variance, seconds }
}

struct Rows {
    method: Method,
    particles: usize,
    values: Vec<f64>,
    seconds: f64,
}

fn run_methods<M: ControlledModel>(
    model: &M,
    ys: &[DVector<f64>],
    cfg: &LikelihoodConfig,
    seed: u64,
    exact: Option<f64>,
) -> Result<Vec<Rows>, CliError> {
    let mut runs = vec![(cfg.method, cfg.particles)];
    if let Some(b) = &cfg.baseline {
        runs.push((b.method, b.particles));
    }
    runs.into_iter()
        .map(|(method, particles)| {
            let start = Instant::now();
            let values = if method == Method::Kalman {
                vec![exact.ok_or_else(|| CliError::Config("method kalman needs a linear-Gaussian model".into()))?]
            } else {
                replicate(model, ys, cfg, method, particles, seed)?
            };
            Ok(Rows { method, particles, values, seconds: start.elapsed().as_secs_f64() })
        })
        .collect()
}

pub fn likelihood_cmd(config: &Config, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = config
        .likelihood
        .as_ref()
        .ok_or_else(|| CliError::Config("`likelihood` needs a [likelihood] section".into()))?;
    if cfg.reps == 0 {
        return Err(CliError::Config("reps must be at least 1".into()));
    }
    let hash = config.hash()?;
    let (model, data) = prepare(config)?;
    let ys = &data.ys;
    let (rows, exact) = match &model {
        ModelConfig::Lgssm(spec) => {
            let exact = kalman_loglik(spec, ys, cfg.lambda)?;
            (run_methods(&lgssm(spec.clone())?, ys, cfg, config.seed, Some(exact))?, Some(exact))
        }
        ModelConfig::Quadratic(spec) => {
            (run_methods(&build_quadratic_ssm(spec.clone())?, ys, cfg, config.seed, None)?, None)
        }
        ModelConfig::Lrr(spec) => (run_methods(&build_lrr_model(spec.clone())?, ys, cfg, config.seed, None)?, None),
    };

    let mut buf = Vec::new();
    writeln!(buf, "{}", csv_header(&hash, config.seed)).expect("writing to memory");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["method", "rep", "particles", "log_likelihood"]).map_err(|e| CliError::Io(e.to_string()))?;
        for r in &rows {
            let particles = if r.method == Method::Kalman { String::new() } else { r.particles.to_string() };
            for (rep, v) in r.values.iter().enumerate() {
                w.write_record([r.method.name(), &rep.to_string(), &particles, &v.to_string()])
                    .map_err(|e| CliError::Io(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    }
    write_output(out, &buf)?;

    let summaries: Vec<MethodSummary> =
        rows.iter().map(|r| summarize(r.method, r.particles, &r.values, r.seconds)).collect();
    let ratio = match (summaries.first(), summaries.get(1)) {
        (Some(a), Some(b)) => a.variance.zip(b.variance).map(|(x, y)| x / y),
        _ => None,
    };
    let summary = json!({
        "config_hash": hash,
        "seed": config.seed,
        "exact_log_likelihood": exact,
        "methods": summaries,
        "variance_ratio": ratio,
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    if out.is_some() {
        println!("{text}");
    } else {
        eprintln!("{text}");
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct Named<T> {
    name: String,
    #[serde(flatten)]
    target: T,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NameOnly {
    name: String,
}

fn parameters<T: for<'de> Deserialize<'de>>(value: &serde_json::Value) -> Result<Vec<(String, T)>, CliError> {
    let named: Vec<Named<T>> = serde_json::from_value(value.clone())
        .map_err(|e| CliError::Config(format!("infer.parameters: {e}")))?;
    Ok(named.into_iter().map(|n| (n.name, n.target)).collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    config_hash: String,
    state: Smc2State,
}

fn save_checkpoint(path: &Path, hash: &str, state: &Smc2State) -> Result<(), CliError> {
    let text = serde_json::to_string(&json!({ "config_hash": hash, "state": state })).expect("state serializes");
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| io_error("write", &tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_error("write", path, e))
}

fn load_checkpoint(path: &Path, hash: &str) -> Result<Smc2State, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error("read", path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("checkpoint {}: {e}", path.display())))?;
    if ck.config_hash != hash {
        return Err(CliError::Config(format!(
            "checkpoint {} was written for configuration {}, not {hash}",
            path.display(),
            ck.config_hash
        )));
    }
    Ok(ck.state)
}

struct InferRun<'a> {
    prior: &'a Prior,
    ys: &'a [DVector<f64>],
    sampler: Smc2Config,
    hash: &'a str,
    checkpoint: Option<PathBuf>,
    resume: Option<&'a Path>,
    stop_after: Option<usize>,
}

impl InferRun<'_> {
    /// Returns `None` when stopped early.
    fn run<F: ModelFamily>(&self, family: &F) -> Result<Option<serde_json::Value>, CliError> {
        let mut sampler = match self.resume {
            Some(path) => {
                let state = load_checkpoint(path, self.hash)?;
                Smc2Sampler::resume(family, self.prior, self.ys, self.sampler.clone(), state)?
            }
            None => Smc2Sampler::new(family, self.prior, self.ys, self.sampler.clone())?,
        };
        let mut taken = 0;
        while !sampler.is_done() {
            if self.stop_after.is_some_and(|n| taken >= n) {
                return Ok(None);
            }
            sampler.step()?;
            taken += 1;
            if let Some(path) = &self.checkpoint {
                save_checkpoint(path, self.hash, sampler.state())?;
            }
            let d = sampler.state().diagnostics.last().expect("a step was taken");
            eprintln!(
                "iteration {}: lambda {:.6}, ESS {:.1}, acceptance {:.3}",
                d.iteration,
                d.lambda,
                d.ess,
                d.acceptance_rate()
            );
        }
        let out = sampler.finish();
        let acceptance: Vec<&Vec<f64>> = out.state.diagnostics.iter().map(|d| &d.acceptance_rates).collect();
        Ok(Some(json!({
            "config_hash": self.hash,
            "seed": self.sampler.seed,
            "log_evidence": out.log_evidence,
            "parameters": out.summary,
            "ladder": out.state.ladder,
            "acceptance_rates": acceptance,
        })))
    }
}

pub fn infer_cmd(
    config: &Config,
    out: Option<&Path>,
    resume: Option<&Path>,
    stop_after: Option<usize>,
) -> Result<(), CliError> {
    let cfg = config.infer.as_ref().ok_or_else(|| CliError::Config("`infer` needs an [infer] section".into()))?;
    let hash = config.hash()?;
    let (model, data) = prepare(config)?;
    let run = InferRun {
        prior: &cfg.prior,
        ys: &data.ys,
        sampler: cfg.sampler(config.seed),
        hash: &hash,
        checkpoint: cfg.checkpoint.clone().or_else(|| resume.map(Path::to_path_buf)),
        resume,
        stop_after,
    };
    if stop_after.is_some() && run.checkpoint.is_none() {
        return Err(CliError::Config("--stop-after needs a checkpoint path".into()));
    }
    let summary = match model {
        ModelConfig::Lgssm(spec) => run.run(&LgssmFamily::new(spec, parameters::<LgssmParam>(&cfg.parameters)?)?)?,
        ModelConfig::Quadratic(spec) => {
            run.run(&QuadraticFamily::new(spec, parameters::<QuadraticParam>(&cfg.parameters)?)?)?
        }
        ModelConfig::Lrr(spec) => {
            let names: Vec<NameOnly> = serde_json::from_value(cfg.parameters.clone())
                .map_err(|e| CliError::Config(format!("infer.parameters: {e}")))?;
            run.run(&LrrFamily::new(spec, names.into_iter().map(|n| n.name).collect())?)?
        }
    };
    let Some(summary) = summary else {
        eprintln!("stopped early; resume from the checkpoint to continue");
        return Ok(());
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_output(out, text.as_bytes())
}
