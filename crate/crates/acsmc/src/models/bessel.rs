use statrs::function::gamma::ln_gamma;

use crate::numeric::logsumexp;

/// Above this argument (and `x > order^2`) the large-argument expansion is used.
const ASYMPTOTIC_SWITCH: f64 = 50.0;

/// `log I_order(x)` for `order > -1` and `x >= 0`.
pub fn log_bessel_i(order: f64, x: f64) -> f64 {
    debug_assert!(order > -1.0 && x >= 0.0);
    if x == 0.0 {
        return if order == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if x > ASYMPTOTIC_SWITCH && x > order * order {
        if let Some(v) = asymptotic(order, x) {
            return v;
        }
    }
    series(order, x)
}

/// Power series summed in log space around its largest term.
fn series(order: f64, x: f64) -> f64 {
    let log_q = 2.0 * (0.5 * x).ln();
    let mut terms = Vec::new();
    let mut log_term = -ln_gamma(order + 1.0);
    let mut peak = f64::NEG_INFINITY;
    let mut i = 0.0_f64;
    loop {
        terms.push(log_term);
        peak = peak.max(log_term);
        i += 1.0;
        log_term += log_q - i.ln() - (order + i).ln();
        // Terms decrease monotonically once past the peak.
        if log_term < peak - 40.0 && log_term < terms[terms.len() - 1] {
            break;
        }
        if terms.len() > 1_000_000 {
            break;
        }
    }
    order * (0.5 * x).ln() + logsumexp(&terms)
}

/// `I_v(x) ~ e^x / sqrt(2 pi x) * sum_k (-1)^k a_k(v) / x^k`.
fn asymptotic(order: f64, x: f64) -> Option<f64> {
    let mu = 4.0 * order * order;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        let next = -term * (mu - (2.0 * kf - 1.0).powi(2)) / (8.0 * kf * x);
        if next.abs() > term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            return Some(x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln());
        }
    }
    None
}
