//! Log-scale arithmetic helpers.

/// `log(sum(exp(x)))`, returning `-inf` for an empty or all `-inf` input.
pub fn logsumexp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = x.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Normalizes log-weights in place into probabilities and returns the
/// log of their sum. The caller must check the return value for `-inf`.
pub fn normalize_log_weights(logw: &[f64], out: &mut [f64]) -> f64 {
    let lse = logsumexp(logw);
    if lse.is_finite() {
        for (o, &l) in out.iter_mut().zip(logw) {
            *o = (l - lse).exp();
        }
        // Renormalize to absorb rounding so the sum is 1 to machine precision.
        let s: f64 = out.iter().sum();
        for o in out.iter_mut() {
            *o /= s;
        }
    }
    lse
}

/// Sample mean and unbiased sample variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}
