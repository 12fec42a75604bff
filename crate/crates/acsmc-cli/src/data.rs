//! Datasets: simulation with measurement-error scaling and CSV files.
//!
//! A dataset file starts with `#` comment lines, one of which carries
//! `T=<rows>, d_y=<columns>`, followed by a CSV table whose header names
//! the observation columns `y1..y{d_y}` and optionally state columns.

use std::fs;
use std::path::Path;

use acsmc::model::{simulate, ControlledModel, Trajectory};
use acsmc::models::{build_lrr_model, build_quadratic_ssm, lgssm};
use acsmc::rng::substream;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::config::{Config, DataConfig, ModelConfig};
use crate::error::{io_error, CliError};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub ys: Vec<DVector<f64>>,
    /// Latent path `s_0..s_T`, when simulated.
    pub states: Option<Vec<Vec<f64>>>,
    /// Observation noise sd per series, when set by measurement-error scaling.
    pub measurement_sd: Option<Vec<f64>>,
}

fn simulate_with<M: ControlledModel>(
    model: acsmc::Result<M>,
    horizon: usize,
    seed: u64,
) -> acsmc::Result<(Trajectory, Vec<DVector<f64>>)> {
    simulate(&model?, horizon, &mut substream(seed, &[0]))
}

fn simulate_model(model: &ModelConfig, horizon: usize, seed: u64) -> acsmc::Result<(Trajectory, Vec<DVector<f64>>)> {
    match model {
        ModelConfig::Lgssm(spec) => simulate_with(lgssm(spec.clone()), horizon, seed),
        ModelConfig::Quadratic(spec) => simulate_with(build_quadratic_ssm(spec.clone()), horizon, seed),
        ModelConfig::Lrr(spec) => simulate_with(build_lrr_model(spec.clone()), horizon, seed),
    }
}

/// Observation offset and loading of models with linear-Gaussian
/// observations, and a way to replace their noise covariance.
fn gaussian_observation(model: &mut ModelConfig) -> Option<(DVector<f64>, DMatrix<f64>, &mut DMatrix<f64>)> {
    match model {
        ModelConfig::Lgssm(s) => Some((s.d.clone(), s.e.clone(), &mut s.f)),
        ModelConfig::Quadratic(s) => Some((s.obs_offset.clone(), s.obs_loading.clone(), &mut s.obs_cov)),
        ModelConfig::Lrr(_) => None,
    }
}

/// Loads or simulates the data. With measurement-error scaling the
/// returned model carries the implied observation covariance.
pub fn prepare(config: &Config) -> Result<(ModelConfig, Dataset), CliError> {
    let mut model = config.model.clone();
    match &config.data {
        DataConfig::File { path } => Ok((model, read_dataset(path)?)),
        DataConfig::Simulated { horizon, measurement_error, seed } => {
            if *horizon == 0 {
                return Err(CliError::Config("data horizon must be at least 1".into()));
            }
            let seed = seed.unwrap_or(config.seed);
            let (traj, ys) = simulate_model(&model, *horizon, seed)?;
            let Some(me) = *measurement_error else {
                return Ok((model, Dataset { ys, states: Some(traj.states), measurement_sd: None }));
            };
            if !(me > 0.0 && me.is_finite()) {
                return Err(CliError::Config(format!("measurement error must be positive, got {me}")));
            }
            let (offset, loading, cov) = gaussian_observation(&mut model).ok_or_else(|| {
                CliError::Config("measurement-error scaling needs linear-Gaussian observations".into())
            })?;
            let clean: Vec<DVector<f64>> =
                traj.states[1..].iter().map(|s| &offset + &loading * DVector::from_column_slice(s)).collect();
            let sd = scaled_sd(&clean, me);
            if sd.iter().any(|v| !(*v > 0.0)) {
                return Err(CliError::Config("a noiseless series is constant; cannot scale its noise".into()));
            }
            *cov = DMatrix::from_diagonal(&DVector::from_iterator(sd.len(), sd.iter().map(|v| v * v)));
            let mut rng = substream(seed, &[1]);
            let ys = clean
                .iter()
                .map(|y| {
                    DVector::from_fn(y.len(), |j, _| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        y[j] + sd[j] * e
                    })
                })
                .collect();
            Ok((model, Dataset { ys, states: Some(traj.states), measurement_sd: Some(sd) }))
        }
    }
}

/// `fraction` times the sample sd of each column.
pub fn scaled_sd(series: &[DVector<f64>], fraction: f64) -> Vec<f64> {
    let n = series.len() as f64;
    let dy = series[0].len();
    (0..dy)
        .map(|j| {
            let mean = series.iter().map(|y| y[j]).sum::<f64>() / n;
            let var = series.iter().map(|y| (y[j] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            fraction * var.sqrt()
        })
        .collect()
}

pub fn write_dataset(
    data: &Dataset,
    header: &str,
    with_states: bool,
    out: &mut dyn std::io::Write,
) -> Result<(), CliError> {
    let horizon = data.ys.len();
    let dy = data.ys[0].len();
    let io = |e: std::io::Error| CliError::Io(format!("cannot write dataset: {e}"));
    writeln!(out, "{header}").map_err(io)?;
    writeln!(out, "# T={horizon}, d_y={dy}").map_err(io)?;
    if let Some(sd) = &data.measurement_sd {
        let list: Vec<String> = sd.iter().map(|v| v.to_string()).collect();
        writeln!(out, "# measurement_sd={}", list.join(",")).map_err(io)?;
    }
    let states = if with_states { data.states.as_deref() } else { None };
    let ds = states.map_or(0, |s| s[0].len());
    let mut w = csv::Writer::from_writer(out);
    let mut names: Vec<String> = (1..=dy).map(|j| format!("y{j}")).collect();
    names.extend((1..=ds).map(|j| format!("s{j}")));
    w.write_record(&names).map_err(|e| CliError::Io(e.to_string()))?;
    for t in 0..horizon {
        let mut row: Vec<String> = data.ys[t].iter().map(|v| v.to_string()).collect();
        if let Some(s) = states {
            row.extend(s[t + 1].iter().map(|v| v.to_string()));
        }
        w.write_record(&row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(io)
}

fn header_value(line: &str, key: &str) -> Option<usize> {
    line.trim_start_matches('#')
        .split(',')
        .filter_map(|kv| kv.trim().split_once('='))
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.trim().parse().ok())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error("read", path, e))?;
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let (mut horizon, mut dy) = (None, None);
    for line in text.lines().filter(|l| l.starts_with('#')) {
        horizon = horizon.or(header_value(line, "T"));
        dy = dy.or(header_value(line, "d_y"));
    }
    let (horizon, dy) = match (horizon, dy) {
        (Some(t), Some(d)) if t > 0 && d > 0 => (t, d),
        _ => return Err(bad("missing or invalid `# T=..., d_y=...` header".into())),
    };
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let cols: Vec<usize> = (1..=dy)
        .map(|j| {
            let name = format!("y{j}");
            headers.iter().position(|h| h.trim() == name).ok_or_else(|| bad(format!("no column {name}")))
        })
        .collect::<Result<_, _>>()?;
    let mut ys = Vec::with_capacity(horizon);
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let y = cols
            .iter()
            .map(|&c| {
                rec.get(c)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("row {}: bad value in column {}", i + 1, c + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        ys.push(DVector::from_vec(y));
    }
    if ys.len() != horizon {
        return Err(bad(format!("header says T={horizon} but the table has {} rows", ys.len())));
    }
    Ok(Dataset { ys, states: None, measurement_sd: None })
}
