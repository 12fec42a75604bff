use acsmc::policy::{fit_logquadratic, refine_step, QuadCoeffs, RidgeConfig, DEFAULT_ALPHA};
use acsmc::rng;
use acsmc::smc::{ess, multinomial_resample, trace_lineage};
use acsmc::smc2::{adapt_temperature, incremental_logweight, PriorComponent};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::from_seed(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r))
}

fn symmetric(m: usize, seed: u64, scale: f64) -> DMatrix<f64> {
    let g = gaussian_matrix(m, m, seed);
    (&g + g.transpose()) * (0.5 * scale)
}

fn coeffs(a: DMatrix<f64>, n: usize, seed: u64) -> QuadCoeffs {
    let m = a.nrows();
    QuadCoeffs::new(
        a,
        gaussian_matrix(m, 1, seed).column(0).into(),
        gaussian_matrix(m, n, seed + 1),
        symmetric(n, seed + 2, 1.0),
        gaussian_matrix(n, 1, seed + 3).column(0).into(),
        0.0,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn refinement_keeps_the_guard(m in 1usize..5, n in 0usize..3, scale in 0.1f64..50.0, seed in any::<u64>()) {
        let a = DMatrix::<f64>::identity(m, m) * 0.1 + symmetric(m, seed, 0.2);
        let shift = a.symmetric_eigenvalues().min().min(0.0);
        let current = coeffs(a - DMatrix::identity(m, m) * shift, n, seed);
        let increment = coeffs(symmetric(m, seed ^ 1, scale), n, seed ^ 2);
        let (refined, kappa) = refine_step(0, &current, &increment, DEFAULT_ALPHA).unwrap();
        prop_assert!((0.0..=1.0).contains(&kappa));
        prop_assert!((&refined.a + DMatrix::identity(m, m) * DEFAULT_ALPHA).cholesky().is_some());
        prop_assert!((DMatrix::identity(m, m) + &refined.a * 2.0).cholesky().is_some());
    }

    #[test]
    fn ridge_fit_recovers_quadratics(m in 1usize..3, n in 0usize..3, seed in any::<u64>()) {
        let a = symmetric(m, seed, 1.0);
        let truth = coeffs(a, n, seed ^ 7);
        let npts = 300;
        let z: Vec<f64> = gaussian_matrix(n, npts, seed ^ 3).as_slice().to_vec();
        let zp: Vec<f64> = gaussian_matrix(m, npts, seed ^ 4).as_slice().to_vec();
        let targets: Vec<f64> = (0..npts).map(|i| truth.log_policy(&z[i * n..(i + 1) * n], &zp[i * m..(i + 1) * m])).collect();
        let fit = fit_logquadratic(m, n, &z, &zp, &targets, &RidgeConfig { shrinkage: 1e-12, standardize: true }).unwrap();
        prop_assert!(fit.max_abs_diff(&truth) < 1e-5);
    }

    #[test]
    fn ess_is_between_one_and_n(w in prop::collection::vec(0.0f64..1.0, 1..50)) {
        prop_assume!(w.iter().any(|&v| v > 0.0));
        let e = ess(&w).unwrap();
        prop_assert!(e >= 1.0 - 1e-12 && e <= w.len() as f64 + 1e-9);
    }

    #[test]
    fn resampling_only_picks_positive_weights(w in prop::collection::vec(0.0f64..1.0, 1..30), seed in any::<u64>()) {
        prop_assume!(w.iter().any(|&v| v > 0.0));
        let idx = multinomial_resample(&w, 40, &mut rng::from_seed(seed)).unwrap();
        prop_assert_eq!(idx.len(), 40);
        prop_assert!(idx.iter().all(|&i| i < w.len() && w[i] > 0.0));
    }

    #[test]
    fn lineage_follows_ancestors(seed in any::<u64>(), horizon in 1usize..8, n in 1usize..6) {
        let mut r = rng::from_seed(seed);
        let ancestors: Vec<Vec<usize>> =
            (0..horizon).map(|_| (0..n).map(|_| rand::Rng::random_range(&mut r, 0..n)).collect()).collect();
        let terminal = n - 1;
        let path = trace_lineage(&ancestors, terminal).unwrap();
        prop_assert_eq!(path.len(), horizon + 1);
        prop_assert_eq!(path[horizon], terminal);
        for t in 1..=horizon {
            prop_assert_eq!(path[t - 1], ancestors[t - 1][path[t]]);
        }
    }

    #[test]
    fn incremental_weights_are_linear(log_obs in prop::collection::vec(-20.0f64..5.0, 1..20), lp in 0.0f64..0.5, delta in 0.0f64..0.25) {
        let one = incremental_logweight(&log_obs, lp, lp + delta).unwrap();
        let two = incremental_logweight(&log_obs, lp, lp + 2.0 * delta).unwrap();
        prop_assert!((two - 2.0 * one).abs() < 1e-9 * (1.0 + one.abs()));
    }

    #[test]
    fn temperature_root_hits_target(sums in prop::collection::vec(-200.0f64..0.0, 2..100), lp in 0.0f64..0.9, kappa in 0.1f64..0.9) {
        let next = adapt_temperature(&sums, lp, kappa).unwrap();
        prop_assert!(next > lp && next <= 1.0);
        let logw: Vec<f64> = sums.iter().map(|s| s * (next - lp)).collect();
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let e = ess(&w).unwrap();
        let p = sums.len() as f64;
        if next < 1.0 {
            prop_assert!((e - kappa * p).abs() <= 1e-6 * p);
        } else {
            prop_assert!(e >= kappa * p - 1e-9);
        }
    }

    #[test]
    fn prior_transforms_round_trip(u in -20.0f64..20.0, lo in -5.0f64..5.0, width in 0.1f64..10.0) {
        let dists = [
            PriorComponent::Normal { mean: lo, sd: width },
            PriorComponent::Uniform { lower: lo, upper: lo + width },
            PriorComponent::TruncatedNormal { mean: lo, sd: width, lower: Some(lo), upper: None },
            PriorComponent::TruncatedNormal { mean: lo, sd: width, lower: Some(lo), upper: Some(lo + width) },
        ];
        for d in dists {
            let x = d.from_unconstrained(u);
            prop_assert!(d.log_density(x).is_finite() || d.log_density(x) == f64::NEG_INFINITY);
            let back = d.to_unconstrained(x);
            if back.is_finite() && x.is_finite() {
                prop_assert!((back - u).abs() < 1e-6 * (1.0 + u.abs()), "{:?}: {} -> {} -> {}", d, u, x, back);
            }
        }
    }
}

#[test]
fn degenerate_inputs_are_errors() {
    assert!(ess(&[0.0, 0.0]).is_err());
    assert!(multinomial_resample(&[], 3, &mut rng::from_seed(1)).is_err());
}
