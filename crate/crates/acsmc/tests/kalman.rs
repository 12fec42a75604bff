mod common;

use acsmc::kalman::{kalman_loglik, kalman_smoother_marginals, LinearGaussianSpec};
use common::{random_lgssm, simulate_lgssm, stacked_loglik, stacked_smoother};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn two_state_three_steps_matches_joint_gaussian() {
    let spec = random_lgssm(2, 2, 1, 0.8, 11);
    let ys = simulate_lgssm(&spec, 3, 12);
    let exact = stacked_loglik(&spec, &ys, 1.0);
    let got = kalman_loglik(&spec, &ys, 1.0).unwrap();
    assert!((got - exact).abs() < 1e-10, "{got} vs {exact}");
}

#[test]
fn scalar_two_steps_matches_grid_integral() {
    // s_0 ~ N(0, b^2), s_t = a s_{t-1} + b e_t, y_t = s_t + N(0, f).
    let (a, b, f) = (0.7, 0.9, 0.3);
    let spec = LinearGaussianSpec::new(
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, b),
        DVector::from_element(1, 0.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, f),
    )
    .unwrap();
    let ys = vec![DVector::from_element(1, 0.4), DVector::from_element(1, -0.8)];
    let npdf = |x: f64, m: f64, v: f64| (-0.5 * (x - m).powi(2) / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let (n, lim) = (161, 6.0);
    let h = 2.0 * lim / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| -lim + i as f64 * h).collect();
    let mut total = 0.0;
    for &s0 in &grid {
        for &s1 in &grid {
            let inner: f64 =
                grid.iter().map(|&s2| npdf(s2, a * s1, b * b) * npdf(ys[1][0], s2, f)).sum::<f64>() * h;
            total += npdf(s0, 0.0, b * b) * npdf(s1, a * s0, b * b) * npdf(ys[0][0], s1, f) * inner;
        }
    }
    total *= h * h;
    let got = kalman_loglik(&spec, &ys, 1.0).unwrap();
    assert!((got - total.ln()).abs() < 1e-8, "{got} vs {}", total.ln());
}

#[test]
fn smoother_matches_joint_conditioning() {
    let spec = random_lgssm(2, 2, 2, 0.9, 21);
    let ys = simulate_lgssm(&spec, 6, 22);
    let marg = kalman_smoother_marginals(&spec, &ys).unwrap();
    for t in 0..=6 {
        let (m, c) = stacked_smoother(&spec, &ys, t);
        assert!((&marg[t].mean - m).abs().max() < 1e-9, "t = {t}");
        assert!((&marg[t].cov - c).abs().max() < 1e-9, "t = {t}");
    }
}

#[test]
fn tempered_loglik_is_zero_at_lambda_zero() {
    let spec = random_lgssm(2, 1, 1, 0.8, 31);
    let ys = simulate_lgssm(&spec, 5, 32);
    assert_eq!(kalman_loglik(&spec, &ys, 0.0).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tempered_loglik_matches_joint_gaussian(seed in 0u64..1000, lambda in 0.05f64..1.0, horizon in 1usize..8) {
        let spec = random_lgssm(2, 2, 2, 0.85, seed);
        let ys = simulate_lgssm(&spec, horizon, seed + 1);
        let exact = stacked_loglik(&spec, &ys, lambda);
        let got = kalman_loglik(&spec, &ys, lambda).unwrap();
        prop_assert!((got - exact).abs() < 1e-8 * exact.abs().max(1.0), "{} vs {}", got, exact);
    }

    #[test]
    fn tempered_loglik_is_convex_in_lambda(seed in 0u64..1000) {
        let spec = random_lgssm(2, 2, 1, 0.8, seed);
        let ys = simulate_lgssm(&spec, 4, seed + 7);
        let l = |x: f64| kalman_loglik(&spec, &ys, x).unwrap();
        let (a, b) = (0.2, 0.6);
        // A cumulant generating function of the summed log densities.
        prop_assert!(l(0.5 * (a + b)) <= 0.5 * (l(a) + l(b)) + 1e-9);
    }
}
