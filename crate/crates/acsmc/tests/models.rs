mod common;

use acsmc::model::simulate;
use acsmc::models::{
    arg_transition_logdensity, build_lgssm, build_quadratic_ssm, AffinePricing, ArgLrrSpec, QuadraticSsmSpec,
};
use acsmc::policy::optimal_policy_lgssm;
use acsmc::rng;
use acsmc::smc::{run_bpf, run_controlled_smc};
use nalgebra::{DMatrix, DVector};

fn linear_only_spec() -> QuadraticSsmSpec {
    QuadraticSsmSpec {
        c: DVector::zeros(2),
        l: DMatrix::from_row_slice(2, 3, &[0.6, 0.1, 0.3, -0.2, 0.5, 0.0]),
        q: vec![DMatrix::zeros(3, 3), DMatrix::zeros(3, 3)],
        rho: DMatrix::from_element(1, 1, 0.8),
        sigma: DMatrix::from_element(1, 1, 0.4),
        obs_offset: DVector::zeros(2),
        obs_loading: DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, 0.0]),
        obs_cov: DMatrix::identity(2, 2) * 0.2,
    }
}

#[test]
fn zero_quadratic_terms_reproduce_the_linear_model_exactly() {
    let spec = linear_only_spec();
    let quad = build_quadratic_ssm(spec.clone()).unwrap();
    let lin = build_lgssm(&spec).unwrap();

    let (paths_q, ys) = simulate(&quad, 15, &mut rng::from_seed(1)).unwrap();
    let (paths_l, ys_l) = simulate(&lin, 15, &mut rng::from_seed(1)).unwrap();
    assert_eq!(paths_q, paths_l);
    assert_eq!(ys, ys_l);

    let a = run_bpf(&quad, &ys, 1.0, 50, &mut rng::from_seed(2)).unwrap();
    let b = run_bpf(&lin, &ys, 1.0, 50, &mut rng::from_seed(2)).unwrap();
    assert_eq!(a.log_likelihood.to_bits(), b.log_likelihood.to_bits());
    assert_eq!(a.trajectory, b.trajectory);

    let policy = optimal_policy_lgssm(lin.inner().spec(), &ys, 0.7).unwrap().lifted;
    let a = run_controlled_smc(&quad, &ys, 0.7, &policy, 50, &mut rng::from_seed(3)).unwrap();
    let b = run_controlled_smc(&lin, &ys, 0.7, &policy, 50, &mut rng::from_seed(3)).unwrap();
    assert_eq!(a.log_likelihood.to_bits(), b.log_likelihood.to_bits());
    assert_eq!(a.trajectory, b.trajectory);
}

#[test]
fn quadratic_spec_validation() {
    let mut spec = linear_only_spec();
    spec.q.pop();
    assert!(build_quadratic_ssm(spec).is_err());
    let mut spec = linear_only_spec();
    spec.obs_cov[(0, 0)] = -1.0;
    assert!(build_quadratic_ssm(spec).is_err());
}

fn arg(nu: f64, phi_s: f64, c: f64) -> ArgLrrSpec {
    ArgLrrSpec {
        delta: 0.998,
        gamma: 8.0,
        psi: 1.5,
        mu: 0.0015,
        rho: 0.98,
        phi_x: 0.04,
        nu,
        phi_s,
        c,
        mu_d: 0.0015,
        big_phi: 2.5,
        phi_dc: 4.5,
        phi_d: 1.0,
        phi_m: 0.01,
        phi_r: 0.01,
        pricing: AffinePricing::default(),
    }
}

/// Mass and first moment of the transition density by the trapezoid rule
/// in `log v`.
fn arg_moments_by_quadrature(spec: &ArgLrrSpec, v_prev: f64) -> (f64, f64) {
    let center = spec.phi_s * spec.c + spec.nu * v_prev;
    let (lo, hi, n) = (center.ln() - 40.0, center.ln() + 6.0, 40_000);
    let h = (hi - lo) / n as f64;
    let (mut mass, mut first) = (0.0, 0.0);
    for i in 0..=n {
        let v = (lo + i as f64 * h).exp();
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        let f = arg_transition_logdensity(spec, v_prev, v).unwrap().exp() * v * w * h;
        mass += f;
        first += f * v;
    }
    (mass, first)
}

#[test]
fn arg_density_integrates_to_one_with_the_stated_mean() {
    for (spec, v_prev) in [(arg(0.5, 1.5, 0.2), 0.4), (arg(0.98, 1.2, 4e-7), 3e-5), (arg(0.9, 4.0, 1e-3), 2e-3)] {
        let (mass, first) = arg_moments_by_quadrature(&spec, v_prev);
        let mean = spec.phi_s * spec.c + spec.nu * v_prev;
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
        assert!((first - mean).abs() < 1e-6 * mean, "mean {first} vs {mean}");
        let (m, _) = spec.arg_moments(v_prev);
        assert!((m - mean).abs() < 1e-15 * mean.max(1.0));
    }
}

#[test]
fn arg_with_no_persistence_is_the_gamma_density() {
    let spec = arg(0.0, 2.5, 0.3);
    for v in [0.01, 0.5, 2.0] {
        let gamma = -statrs::function::gamma::ln_gamma(2.5) - 2.5 * 0.3f64.ln() + 1.5 * f64::ln(v) - v / 0.3;
        let got = arg_transition_logdensity(&spec, 0.7, v).unwrap();
        assert!((got - gamma).abs() < 1e-12);
    }
}
