use serde::{Deserialize, Serialize};

use super::lgssm::{lgssm, LinearGaussianModel};
use super::lrr::{build_lrr_model, AffinePricing, ArgLrrSpec, LrrModel};
use super::quadratic::{build_quadratic_ssm, QuadraticSsmModel, QuadraticSsmSpec};
use crate::error::{Error, Result};
use crate::kalman::LinearGaussianSpec;
use crate::model::{DensityDriven, NoiseDriven};
use crate::smc2::ModelFamily;

/// Entry of a linear-Gaussian spec driven by one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum LgssmParam {
    A { row: usize, col: usize },
    B { row: usize, col: usize },
    /// Observation offset entry.
    D { index: usize },
    E { row: usize, col: usize },
    /// Sets `F[index, index] = theta^2`.
    ObsStd { index: usize },
}

/// Linear-Gaussian models where named parameters overwrite entries of a
/// base spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgssmFamily {
    pub base: LinearGaussianSpec,
    pub parameters: Vec<(String, LgssmParam)>,
}

impl LgssmFamily {
    pub fn new(base: LinearGaussianSpec, parameters: Vec<(String, LgssmParam)>) -> Result<Self> {
        base.validate()?;
        let family = LgssmFamily { base, parameters };
        let probe = family.parameters.iter().map(|_| 1.0).collect::<Vec<_>>();
        family.spec(&probe)?;
        Ok(family)
    }

    pub fn spec(&self, theta: &[f64]) -> Result<LinearGaussianSpec> {
        if theta.len() != self.parameters.len() {
            return Err(Error::Dimension(format!(
                "{} parameters for a family of {}",
                theta.len(),
                self.parameters.len()
            )));
        }
        let mut spec = self.base.clone();
        for ((name, target), &v) in self.parameters.iter().zip(theta) {
            let slot = match *target {
                LgssmParam::A { row, col } => spec.a.get_mut((row, col)),
                LgssmParam::B { row, col } => spec.b.get_mut((row, col)),
                LgssmParam::D { index } => spec.d.get_mut(index),
                LgssmParam::E { row, col } => spec.e.get_mut((row, col)),
                LgssmParam::ObsStd { index } => spec.f.get_mut((index, index)),
            };
            let slot = slot.ok_or_else(|| Error::Dimension(format!("parameter {name} points outside the spec")))?;
            *slot = if matches!(target, LgssmParam::ObsStd { .. }) { v * v } else { v };
        }
        Ok(spec)
    }
}

impl ModelFamily for LgssmFamily {
    type Model = NoiseDriven<LinearGaussianModel>;

    fn parameter_names(&self) -> Vec<String> {
        self.parameters.iter().map(|(n, _)| n.clone()).collect()
    }

    fn build(&self, theta: &[f64]) -> Result<Self::Model> {
        lgssm(self.spec(theta)?)
    }
}

const LRR_FIELDS: [&str; 16] = [
    "delta", "gamma", "psi", "mu", "rho", "phi_x", "sigma_bar", "nu", "phi_s", "c", "mu_d", "big_phi", "phi_dc",
    "phi_d", "phi_m", "phi_r",
];

/// Long-run risk models where the named fields of a base spec are free.
/// `sigma_bar` (the long-run volatility) sets `c = sigma_bar^2 (1 - nu) / phi_s`
/// after the other fields are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrrFamily {
    pub base: ArgLrrSpec,
    pub parameters: Vec<String>,
}

impl LrrFamily {
    pub fn new(base: ArgLrrSpec, parameters: Vec<String>) -> Result<Self> {
        if let Some(bad) = parameters.iter().find(|p| !LRR_FIELDS.contains(&p.as_str())) {
            return Err(Error::InvalidInput(format!("unknown long-run risk parameter {bad}")));
        }
        if parameters.iter().any(|p| p == "sigma_bar") && parameters.iter().any(|p| p == "c") {
            return Err(Error::InvalidInput("sigma_bar and c cannot both be free".into()));
        }
        Ok(LrrFamily { base, parameters })
    }

    pub fn spec(&self, theta: &[f64]) -> Result<ArgLrrSpec> {
        if theta.len() != self.parameters.len() {
            return Err(Error::Dimension(format!(
                "{} parameters for a family of {}",
                theta.len(),
                self.parameters.len()
            )));
        }
        let mut s = self.base.clone();
        let mut sigma_bar = None;
        for (name, &v) in self.parameters.iter().zip(theta) {
            match name.as_str() {
                "delta" => s.delta = v,
                "gamma" => s.gamma = v,
                "psi" => s.psi = v,
                "mu" => s.mu = v,
                "rho" => s.rho = v,
                "phi_x" => s.phi_x = v,
                "sigma_bar" => sigma_bar = Some(v),
                "nu" => s.nu = v,
                "phi_s" => s.phi_s = v,
                "c" => s.c = v,
                "mu_d" => s.mu_d = v,
                "big_phi" => s.big_phi = v,
                "phi_dc" => s.phi_dc = v,
                "phi_d" => s.phi_d = v,
                "phi_m" => s.phi_m = v,
                "phi_r" => s.phi_r = v,
                other => return Err(Error::InvalidInput(format!("unknown long-run risk parameter {other}"))),
            }
        }
        if let Some(sb) = sigma_bar {
            s.c = sb * sb * (1.0 - s.nu) / s.phi_s;
        }
        Ok(s)
    }
}

impl ModelFamily for LrrFamily {
    type Model = DensityDriven<LrrModel<AffinePricing>>;

    fn parameter_names(&self) -> Vec<String> {
        self.parameters.clone()
    }

    fn build(&self, theta: &[f64]) -> Result<Self::Model> {
        build_lrr_model(self.spec(theta)?)
    }
}

/// Entry of a quadratic spec driven by one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum QuadraticParam {
    C { index: usize },
    L { row: usize, col: usize },
    /// Entry `(row, col)` of the quadratic form of endogenous variable
    /// `index`; the mirrored entry is set too.
    Q { index: usize, row: usize, col: usize },
    Rho { row: usize, col: usize },
    Sigma { row: usize, col: usize },
    /// Sets `obs_cov[index, index] = theta^2`.
    ObsStd { index: usize },
}

/// Quadratic models where named parameters overwrite entries of a base
/// spec. Structural maps that go through a solver can be expressed by
/// implementing [`ModelFamily`] directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFamily {
    pub base: QuadraticSsmSpec,
    pub parameters: Vec<(String, QuadraticParam)>,
}

impl QuadraticFamily {
    pub fn new(base: QuadraticSsmSpec, parameters: Vec<(String, QuadraticParam)>) -> Result<Self> {
        base.validate()?;
        let family = QuadraticFamily { base, parameters };
        let probe = family.parameters.iter().map(|_| 0.5).collect::<Vec<_>>();
        family.spec(&probe)?;
        Ok(family)
    }

    pub fn spec(&self, theta: &[f64]) -> Result<QuadraticSsmSpec> {
        if theta.len() != self.parameters.len() {
            return Err(Error::Dimension(format!(
                "{} parameters for a family of {}",
                theta.len(),
                self.parameters.len()
            )));
        }
        let mut spec = self.base.clone();
        for ((name, target), &v) in self.parameters.iter().zip(theta) {
            let outside = || Error::Dimension(format!("parameter {name} points outside the spec"));
            match *target {
                QuadraticParam::C { index } => *spec.c.get_mut(index).ok_or_else(outside)? = v,
                QuadraticParam::L { row, col } => *spec.l.get_mut((row, col)).ok_or_else(outside)? = v,
                QuadraticParam::Q { index, row, col } => {
                    let q = spec.q.get_mut(index).ok_or_else(outside)?;
                    *q.get_mut((row, col)).ok_or_else(outside)? = v;
                    *q.get_mut((col, row)).ok_or_else(outside)? = v;
                }
                QuadraticParam::Rho { row, col } => *spec.rho.get_mut((row, col)).ok_or_else(outside)? = v,
                QuadraticParam::Sigma { row, col } => *spec.sigma.get_mut((row, col)).ok_or_else(outside)? = v,
                QuadraticParam::ObsStd { index } => {
                    *spec.obs_cov.get_mut((index, index)).ok_or_else(outside)? = v * v
                }
            }
        }
        Ok(spec)
    }
}

impl ModelFamily for QuadraticFamily {
    type Model = NoiseDriven<QuadraticSsmModel>;

    fn parameter_names(&self) -> Vec<String> {
        self.parameters.iter().map(|(n, _)| n.clone()).collect()
    }

    fn build(&self, theta: &[f64]) -> Result<Self::Model> {
        build_quadratic_ssm(self.spec(theta)?)
    }
}
