//! Autocorrelation-robust variance of the two ordinate averages.

use nalgebra::{DMatrix, Matrix2, Vector2};

use crate::{Error, Result};

/// Lag used when automatic selection is disabled or breaks down.
pub const DEFAULT_LAG: usize = 10;

/// Components of the bivariate series.
const K: usize = 2;

/// Bartlett-weighted long-run covariance of the mean of `(h1, h2)`, divided by `G`.
///
/// Equal lengths give the full 2x2 matrix. Series of different lengths come from
/// independent chains, so the cross term is zero and each diagonal entry uses its
/// own length.
pub fn nw_variance(h1: &[f64], h2: &[f64], q: usize) -> Result<Matrix2<f64>> {
    let shortest = h1.len().min(h2.len());
    if q >= shortest {
        return Err(Error::InvalidArgument(format!(
            "Newey-West lag {q} needs series longer than {q} (got {shortest})"
        )));
    }
    if h1.len() != h2.len() {
        return Ok(Matrix2::new(univariate(h1, q), 0.0, 0.0, univariate(h2, q)));
    }
    let g = h1.len();
    let gf = g as f64;
    let m1 = mean(h1);
    let m2 = mean(h2);
    let d: Vec<Vector2<f64>> = h1.iter().zip(h2).map(|(a, b)| Vector2::new(a - m1, b - m2)).collect();
    let autocov = |s: usize| -> Matrix2<f64> {
        let mut acc = Matrix2::zeros();
        for t in s..g {
            acc += d[t] * d[t - s].transpose();
        }
        acc / gf
    };
    let mut omega = autocov(0);
    for s in 1..=q {
        let w = 1.0 - s as f64 / (q as f64 + 1.0);
        let om = autocov(s);
        omega += (om + om.transpose()) * w;
    }
    Ok((omega + omega.transpose()) * (0.5 / gf))
}

fn univariate(h: &[f64], q: usize) -> f64 {
    let g = h.len();
    let m = mean(h);
    let d: Vec<f64> = h.iter().map(|v| v - m).collect();
    let autocov = |s: usize| (s..g).map(|t| d[t] * d[t - s]).sum::<f64>() / g as f64;
    let mut omega = autocov(0);
    for s in 1..=q {
        omega += 2.0 * (1.0 - s as f64 / (q as f64 + 1.0)) * autocov(s);
    }
    omega / g as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagSelection {
    pub q: usize,
    /// Set when the VAR design was singular and [`DEFAULT_LAG`] was used instead.
    pub fallback: bool,
}

/// Lag minimising `AIC(q) = ln|Σ̂_q| + 2 K² q / T_e` over VAR(q) fits, `q ∈ [0, q_max]`,
/// to the demeaned bivariate series.
///
/// All fits share the sample `t = q_max, …, T-1` so the criteria are comparable.
/// Series of different lengths are truncated to the shorter one. `q_max` is lowered
/// when the series is too short to fit that many lags.
pub fn select_q(h1: &[f64], h2: &[f64], q_max: usize) -> LagSelection {
    let t = h1.len().min(h2.len());
    let mut q_max = q_max;
    while q_max > 0 && t.saturating_sub(q_max) <= K * q_max + K {
        q_max -= 1;
    }
    if q_max == 0 {
        return LagSelection { q: 0, fallback: false };
    }
    let fallback = LagSelection { q: DEFAULT_LAG, fallback: true };
    let m1 = mean(&h1[..t]);
    let m2 = mean(&h2[..t]);
    let y: Vec<[f64; 2]> = (0..t).map(|i| [h1[i] - m1, h2[i] - m2]).collect();

    // Cross products of [lag 1 .. lag q_max, current] over the common sample; the
    // design for lag q is the leading 2q block.
    let width = K * q_max + K;
    let mut cross = DMatrix::<f64>::zeros(width, width);
    let mut row = vec![0.0; width];
    for s in q_max..t {
        for lag in 1..=q_max {
            row[K * (lag - 1)] = y[s - lag][0];
            row[K * (lag - 1) + 1] = y[s - lag][1];
        }
        row[K * q_max] = y[s][0];
        row[K * q_max + 1] = y[s][1];
        for i in 0..width {
            for j in i..width {
                cross[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..width {
        for j in 0..i {
            cross[(i, j)] = cross[(j, i)];
        }
    }
    let te = (t - q_max) as f64;
    let yy = cross.view((K * q_max, K * q_max), (K, K)).into_owned();

    let mut best: Option<(usize, f64)> = None;
    for q in 0..=q_max {
        let resid = if q == 0 {
            yy.clone()
        } else {
            let p = K * q;
            let zz = cross.view((0, 0), (p, p)).into_owned();
            let zy = cross.view((0, K * q_max), (p, K)).into_owned();
            let Some(chol) = zz.cholesky() else {
                return fallback;
            };
            let coef = chol.solve(&zy);
            &yy - zy.transpose() * coef
        };
        let det = (resid[(0, 0)] * resid[(1, 1)] - resid[(0, 1)] * resid[(1, 0)]) / (te * te);
        if !(det > 0.0 && det.is_finite()) {
            return fallback;
        }
        let aic = det.ln() + 2.0 * (K * K) as f64 * q as f64 / te;
        if best.is_none_or(|(_, b)| aic < b) {
            best = Some((q, aic));
        }
    }
    best.map_or(fallback, |(q, _)| LagSelection { q, fallback: false })
}

/// Standard error of `ln ĥ1 + ln ĥ2` by the delta method: `sqrt(g' V g)`, `g = (1/ĥ1, 1/ĥ2)`.
pub fn delta_method_se(var_h: &Matrix2<f64>, h_bar: [f64; 2]) -> Result<f64> {
    if !(h_bar[0] > 0.0 && h_bar[1] > 0.0) {
        return Err(Error::InvalidArgument(format!("ordinate averages must be positive, got {h_bar:?}")));
    }
    let g = Vector2::new(1.0 / h_bar[0], 1.0 / h_bar[1]);
    let v = (g.transpose() * var_h * g)[0];
    Ok(v.max(0.0).sqrt())
}
