//! Built-in model families.

mod bessel;
mod families;
mod gaussian_obs;
mod lgssm;
mod lrr;
mod quadratic;

pub use bessel::log_bessel_i;
pub use families::{LgssmFamily, LgssmParam, LrrFamily, QuadraticFamily, QuadraticParam};
pub use lgssm::{lgssm, LinearGaussianModel};
pub use lrr::{
    arg_sample, arg_transition_logdensity, build_lrr_model, lognormal_moment_match, AffinePricing, ArgLrrSpec,
    LrrModel, PricingFunctions,
};
pub use quadratic::{build_lgssm, build_quadratic_ssm, QuadraticSsmModel, QuadraticSsmSpec};
