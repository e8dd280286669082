//! Cholesky-based helpers for SPD systems, Gaussian and inverse-Wishart densities and draws.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::stats::{ln_multigamma, LN_2PI};
use crate::{Error, Result};

pub type Chol = Cholesky<f64, Dyn>;

/// Number of times the jitter is doubled before giving up.
pub const MAX_JITTER_DOUBLINGS: usize = 6;

/// Cholesky factor of a symmetric matrix that should be positive definite.
///
/// The plain matrix is tried first. On failure `1e-10 * trace / n` is added to the
/// diagonal, doubling up to [`MAX_JITTER_DOUBLINGS`] times. Returns the factor and the
/// jitter that was applied.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<(Chol, f64)> {
    let n = m.nrows();
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let trace = m.trace();
    let base = if trace > 0.0 && trace.is_finite() {
        1e-10 * trace / n as f64
    } else {
        1e-10
    };
    let mut jitter = base;
    for _ in 0..=MAX_JITTER_DOUBLINGS {
        let mut j = m.clone();
        for i in 0..n {
            j[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(j) {
            return Ok((c, jitter));
        }
        jitter *= 2.0;
    }
    Err(not_pd(m, MAX_JITTER_DOUBLINGS + 1, jitter / 2.0))
}

/// Strict Cholesky factor (no jitter).
pub fn cholesky(m: &DMatrix<f64>) -> Result<Chol> {
    Cholesky::new(m.clone()).ok_or_else(|| not_pd(m, 0, 0.0))
}

fn not_pd(m: &DMatrix<f64>, attempts: usize, jitter: f64) -> Error {
    let diag = m.diagonal();
    Error::NotPositiveDefinite {
        size: m.nrows(),
        attempts,
        jitter,
        min_diag: diag.iter().copied().fold(f64::INFINITY, f64::min),
        max_diag: diag.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// `ln |A|` from the Cholesky factor of `A`.
pub fn log_det(chol: &Chol) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Solves `L x = b` for the lower factor `L`.
pub fn solve_lower(chol: &Chol, b: &DMatrix<f64>) -> DMatrix<f64> {
    chol.l_dirty()
        .solve_lower_triangular(b)
        .expect("cholesky factor has a positive diagonal")
}

/// Solves `L' x = b` for the lower factor `L`.
pub fn solve_lower_transpose(chol: &Chol, b: &DMatrix<f64>) -> DMatrix<f64> {
    chol.l_dirty()
        .tr_solve_lower_triangular(b)
        .expect("cholesky factor has a positive diagonal")
}

/// Log density of `N(mean, cov)` at `x`, given `chol` = Cholesky of `cov`.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, chol: &Chol) -> f64 {
    let d = DMatrix::from_column_slice(x.len(), 1, (x - mean).as_slice());
    let w = solve_lower(chol, &d);
    let k = x.len() as f64;
    -0.5 * (k * LN_2PI + log_det(chol) + w.norm_squared())
}

/// Log density of `N(mean, P^{-1})` at `x`, given `chol` = Cholesky of the precision `P`.
pub fn mvn_log_density_precision(x: &DVector<f64>, mean: &DVector<f64>, chol: &Chol) -> f64 {
    let d = x - mean;
    // (x-m)' P (x-m) = |L' (x-m)|^2
    let q = chol.l_dirty().lower_triangle().transpose() * &d;
    let k = x.len() as f64;
    -0.5 * (k * LN_2PI - log_det(chol) + q.norm_squared())
}

/// Draw from `N(mean, P^{-1})` given the Cholesky factor of the precision `P`.
pub fn sample_mvn_precision<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    chol: &Chol,
    rng: &mut R,
) -> DVector<f64> {
    let k = mean.len();
    let z = DMatrix::from_fn(k, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let e = solve_lower_transpose(chol, &z);
    mean + e.column(0)
}

/// Draw from `N(mean, C)` given the Cholesky factor of the covariance `C`.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, chol: &Chol, rng: &mut R) -> DVector<f64> {
    let k = mean.len();
    let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + chol.l_dirty().lower_triangle() * z
}

/// Draw `Σ ~ IW(scale, dof)`, density `∝ |Σ|^{-(dof+n+1)/2} exp(-tr(scale Σ^{-1})/2)`.
///
/// With `scale = C C'` and a Bartlett factor `A` of `W(I, dof)`, `Σ = (C A^{-T})(C A^{-T})'`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    scale: &DMatrix<f64>,
    dof: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = scale.nrows();
    if dof <= n as f64 - 1.0 {
        return Err(Error::InvalidArgument(format!(
            "inverse-Wishart needs dof > n - 1 (dof {dof}, n {n})"
        )));
    }
    let c = cholesky(scale)?;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let chi = ChiSquared::new(dof - i as f64)
            .map_err(|e| Error::InvalidArgument(format!("chi-square: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    // M' = A^{-1} C'
    let ct = c.l().transpose();
    let mt = a
        .solve_lower_triangular(&ct)
        .ok_or_else(|| Error::InvalidArgument("degenerate Bartlett factor".into()))?;
    let m = mt.transpose();
    let sigma = &m * m.transpose();
    Ok(symmetrize(sigma))
}

/// Log density of `IW(scale, dof)` at `sigma`.
pub fn inverse_wishart_log_density(sigma: &DMatrix<f64>, scale: &DMatrix<f64>, dof: f64) -> Result<f64> {
    let n = sigma.nrows();
    let nf = n as f64;
    let cs = cholesky(sigma)?;
    let cscale = cholesky(scale)?;
    // tr(scale Σ^{-1}) = |L_Σ^{-1} C|_F^2
    let w = solve_lower(&cs, &cscale.l());
    let tr = w.norm_squared();
    Ok(0.5 * dof * log_det(&cscale) - 0.5 * dof * nf * std::f64::consts::LN_2
        - ln_multigamma(n, 0.5 * dof)
        - 0.5 * (dof + nf + 1.0) * log_det(&cs)
        - 0.5 * tr)
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
