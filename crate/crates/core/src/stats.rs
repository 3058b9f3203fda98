//! Small numeric helpers shared across the samplers.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::rng::Rng;

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with denominator n - 1.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Linear-interpolation quantile of already sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, p)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Index drawn from unnormalized log-probabilities using the supplied uniform.
pub fn categorical_from_logs(logs: &[f64], u: f64, scratch: &mut Vec<f64>) -> usize {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scratch.clear();
    let mut total = 0.0;
    for &l in logs {
        total += (l - m).exp();
        scratch.push(total);
    }
    let target = u * total;
    scratch
        .iter()
        .position(|&c| target < c)
        .unwrap_or(logs.len() - 1)
}

pub fn categorical(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if target < acc {
            return k;
        }
    }
    probs.len() - 1
}

pub fn std_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// log of a Gamma(shape, 1) draw; stable for very small shapes.
pub fn log_gamma_draw(shape: f64, rng: &mut Rng) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0)
            .expect("valid gamma shape")
            .sample(rng)
            .ln()
    } else {
        // G(a) = G(a + 1) * U^(1/a)
        let g = Gamma::new(shape + 1.0, 1.0)
            .expect("valid gamma shape")
            .sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.ln() + u.ln() / shape
    }
}

/// Dirichlet draw written into `out`. Computed in log space, so tiny
/// concentrations underflow to exact zeros only after normalization.
pub fn dirichlet_into(alpha: &[f64], rng: &mut Rng, out: &mut [f64]) {
    debug_assert_eq!(alpha.len(), out.len());
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = log_gamma_draw(a, rng);
    }
    let lse = log_sum_exp(out);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - lse).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Draw from N(mean, 1) truncated to (0, inf) when `positive`, else (-inf, 0).
pub fn truncated_normal_unit(mean: f64, positive: bool, rng: &mut Rng) -> f64 {
    // Reduce to a standard normal truncated below at `a`.
    let (a, sign) = if positive { (-mean, 1.0) } else { (mean, -1.0) };
    let x = lower_truncated_std_normal(a, rng);
    if positive {
        mean + x
    } else {
        mean + sign * x
    }
}

/// Standard normal conditioned on x > a.
fn lower_truncated_std_normal(a: f64, rng: &mut Rng) -> f64 {
    if a < 0.5 {
        loop {
            let x = std_normal(rng);
            if x > a {
                return x;
            }
        }
    }
    // Robert (1995) exponential proposal.
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let u: f64 = rng.random::<f64>();
        let x = a - (1.0 - u).ln() / lambda;
        let rho = (-0.5 * (x - lambda) * (x - lambda)).exp();
        if rng.random::<f64>() <= rho {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn type7_quantiles_match_hand_values() {
        let v = [2.0, 4.0, 5.0, 10.0, 100.0];
        assert_eq!(quantile_sorted(&v, 0.25), 4.0);
        assert_eq!(quantile_sorted(&v, 0.5), 5.0);
        assert_eq!(quantile_sorted(&v, 0.75), 10.0);
        assert!((quantile_sorted(&[1.0, 2.0], 0.5) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn dirichlet_sums_to_one_even_for_sparse_alpha() {
        let mut rng = rng_from(1);
        let alpha = vec![1.0 / 30.0; 30];
        let mut out = vec![0.0; 30];
        for _ in 0..100 {
            dirichlet_into(&alpha, &mut rng, &mut out);
            let s: f64 = out.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(out.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn truncated_normal_respects_sign_and_mean() {
        let mut rng = rng_from(2);
        let n = 200_000;
        let mut s = 0.0;
        for _ in 0..n {
            let x = truncated_normal_unit(0.0, true, &mut rng);
            assert!(x > 0.0);
            s += x;
        }
        // E[X | X > 0] = sqrt(2/pi)
        assert!((s / n as f64 - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.01);
        for _ in 0..1000 {
            assert!(truncated_normal_unit(3.0, false, &mut rng) < 0.0);
            assert!(truncated_normal_unit(-6.0, true, &mut rng) > 0.0);
        }
    }

    #[test]
    fn categorical_from_logs_handles_large_magnitudes() {
        let mut scratch = Vec::new();
        let logs = [-1000.0, 0.0, -1000.0];
        assert_eq!(categorical_from_logs(&logs, 0.3, &mut scratch), 1);
        assert_eq!(categorical_from_logs(&[0.0, 0.0], 0.75, &mut scratch), 1);
    }
}
