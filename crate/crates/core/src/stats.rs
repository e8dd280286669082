//! Scalar distribution helpers shared across the crate.

use std::f64::consts::{PI, SQRT_2};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn norm_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * LN_2PI
}

/// Standard normal CDF, accurate in both tails through `erfc`.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// `ln Φ(z)`, finite far into the lower tail.
pub fn norm_log_cdf(z: f64) -> f64 {
    if z > -30.0 {
        norm_cdf(z).ln()
    } else {
        // Φ(z) = φ(z) R(-z) with R the Mills ratio
        let t = -z;
        let c = mills_tail(t);
        norm_log_pdf(z) - (t + c).ln()
    }
}

/// Tail of the Laplace continued fraction for the Mills ratio:
/// `R(t) = 1 / (t + c(t))` with `c(t) = 1 / (t + 2 / (t + 3 / (t + ...)))`.
///
/// Converges quickly for `t` of a few units and above.
pub(crate) fn mills_tail(t: f64) -> f64 {
    let mut tail = 0.0;
    for k in (2..=120).rev() {
        tail = k as f64 / (t + tail);
    }
    1.0 / (t + tail)
}

/// Univariate normal log density with the given mean and variance.
pub fn normal_log_density(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Log of the multivariate gamma function `Γ_p(a)`.
pub fn ln_multigamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    let mut acc = pf * (pf - 1.0) / 4.0 * PI.ln();
    for j in 1..=p {
        acc += ln_gamma(a + (1.0 - j as f64) / 2.0);
    }
    acc
}

/// `ln Σ exp(v)`; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation with the `n - 1` divisor; zero for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
