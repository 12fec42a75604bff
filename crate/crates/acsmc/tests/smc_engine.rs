mod common;

use acsmc::kalman::kalman_loglik;
use acsmc::models::lgssm;
use acsmc::policy::optimal_policy_lgssm;
use acsmc::rng;
use acsmc::smc::{constant_one_policy, run_bpf, run_controlled_smc};
use common::{mean_sd, random_lgssm, simulate_lgssm};

#[test]
fn optimal_policy_gives_exact_likelihood() {
    let spec = random_lgssm(2, 2, 1, 0.8, 5);
    let ys = simulate_lgssm(&spec, 12, 6);
    let model = lgssm(spec.clone()).unwrap();
    for lambda in [1.0, 0.37] {
        let exact = kalman_loglik(&spec, &ys, lambda).unwrap();
        let opt = optimal_policy_lgssm(&spec, &ys, lambda).unwrap();
        for n in [1, 16] {
            let out = run_controlled_smc(&model, &ys, lambda, &opt.lifted, n, &mut rng::from_seed(n as u64)).unwrap();
            assert!((out.log_likelihood - exact).abs() < 1e-8 * exact.abs(), "{} vs {exact}", out.log_likelihood);
        }
    }
}

#[test]
fn bpf_runs_are_reproducible() {
    let spec = random_lgssm(2, 2, 1, 0.8, 7);
    let ys = simulate_lgssm(&spec, 10, 8);
    let model = lgssm(spec).unwrap();
    let a = run_bpf(&model, &ys, 1.0, 64, &mut rng::from_seed(1)).unwrap();
    let b = run_bpf(&model, &ys, 1.0, 64, &mut rng::from_seed(1)).unwrap();
    assert_eq!(a.log_likelihood.to_bits(), b.log_likelihood.to_bits());
    assert_eq!(a.trajectory, b.trajectory);
}

#[test]
fn constant_one_policy_reproduces_the_bootstrap_filter() {
    let spec = random_lgssm(2, 2, 2, 0.8, 9);
    let ys = simulate_lgssm(&spec, 10, 10);
    let model = lgssm(spec).unwrap();
    let one = constant_one_policy(&model, ys.len());
    let a = run_bpf(&model, &ys, 0.6, 100, &mut rng::from_seed(11)).unwrap();
    let b = run_controlled_smc(&model, &ys, 0.6, &one, 100, &mut rng::from_seed(11)).unwrap();
    assert_eq!(a.log_likelihood.to_bits(), b.log_likelihood.to_bits());
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.ess, b.ess);
}

#[test]
fn bootstrap_likelihood_is_unbiased_on_a_short_series() {
    let spec = random_lgssm(1, 1, 1, 0.7, 12);
    let ys = simulate_lgssm(&spec, 5, 13);
    let model = lgssm(spec.clone()).unwrap();
    let exact = kalman_loglik(&spec, &ys, 1.0).unwrap();
    let ratios: Vec<f64> = (0..400)
        .map(|rep| (run_bpf(&model, &ys, 1.0, 32, &mut rng::substream(14, &[rep])).unwrap().log_likelihood - exact).exp())
        .collect();
    let (m, sd) = mean_sd(&ratios);
    assert!((m - 1.0).abs() < 4.0 * sd / 20.0, "mean ratio {m}, sd {sd}");
}

#[test]
fn filter_rejects_bad_arguments() {
    let spec = random_lgssm(1, 1, 1, 0.7, 15);
    let ys = simulate_lgssm(&spec, 3, 16);
    let model = lgssm(spec).unwrap();
    assert!(run_bpf(&model, &ys, 1.0, 0, &mut rng::from_seed(1)).is_err());
    assert!(run_bpf(&model, &ys, 1.2, 10, &mut rng::from_seed(1)).is_err());
    assert!(run_bpf(&model, &[], 1.0, 10, &mut rng::from_seed(1)).is_err());
}
