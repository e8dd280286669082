//! Acquisition functions and their maximisation over the search box.

use rand::Rng;

use crate::effort::{build_covariates, EffortModel};
use crate::gp::GpModel;
use crate::stats::{mills_tail, norm_cdf, norm_log_pdf, norm_pdf};
use crate::{Bounds, Error, Result};

/// Below this standardised improvement EI is evaluated in log space.
const LOG_EI_THRESHOLD: f64 = -8.0;

/// `Φ((m - f_max) / s)`.
pub fn prob_improvement(m: f64, s: f64, f_max: f64) -> Result<f64> {
    if !(m.is_finite() && s.is_finite() && f_max.is_finite()) {
        return Err(Error::NonFinite("probability of improvement"));
    }
    if s <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "probability of improvement needs s > 0, got {s}"
        )));
    }
    Ok(norm_cdf((m - f_max) / s))
}

/// `(m - f_max) Φ(z) + s φ(z)` with `z = (m - f_max) / s`; `max(m - f_max, 0)` at `s = 0`.
pub fn expected_improvement(m: f64, s: f64, f_max: f64) -> Result<f64> {
    if !(m.is_finite() && s.is_finite() && f_max.is_finite()) {
        return Err(Error::NonFinite("expected improvement"));
    }
    if s < 0.0 {
        return Err(Error::InvalidArgument(format!("expected improvement needs s >= 0, got {s}")));
    }
    let d = m - f_max;
    if s == 0.0 {
        return Ok(d.max(0.0));
    }
    let z = d / s;
    if z < LOG_EI_THRESHOLD {
        // z Φ(z) + φ(z) = φ(z) (1 - t R(t)) with t = -z, and 1 - t R(t) = c / (t + c)
        let t = -z;
        let c = mills_tail(t);
        let log_ei = s.ln() + norm_log_pdf(z) + c.ln() - (t + c).ln();
        return Ok(log_ei.exp());
    }
    Ok((d * norm_cdf(z) + s * norm_pdf(z)).max(0.0))
}

/// What the acquisition needs to know about the current state of the search.
#[derive(Debug, Clone, Copy)]
pub struct AcquisitionContext<'a> {
    pub f_max: f64,
    pub surrogate: &'a GpModel,
    pub effort: Option<&'a EffortModel>,
    /// Divisor used while no effort model is available.
    pub g_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoopScore {
    pub value: f64,
    pub ei: f64,
    /// Predicted draws `Ĝ(x)`, or `g_min` on cold start.
    pub predicted_draws: f64,
    /// True when no fitted effort model was available.
    pub cold_start: bool,
}

/// Expected improvement at the surrogate posterior of `x`.
pub fn ei_at(x: &[f64], ctx: &AcquisitionContext<'_>) -> Result<f64> {
    let post = ctx.surrogate.predict(x)?;
    expected_improvement(post.mean, post.sd, ctx.f_max)
}

/// `EI(x) / Ĝ(x)`, with `Ĝ` predicted by the effort model and clamped to `[g_min, g_max]`.
pub fn boop_acquisition(x: &[f64], ctx: &AcquisitionContext<'_>) -> Result<BoopScore> {
    let post = ctx.surrogate.predict(x)?;
    let ei = expected_improvement(post.mean, post.sd, ctx.f_max)?;
    match ctx.effort {
        Some(model) => {
            let z = build_covariates(x, &post, ctx.f_max)?;
            let g = model.predict(&z)?;
            Ok(BoopScore { value: ei / g, ei, predicted_draws: g, cold_start: false })
        }
        None => Ok(BoopScore {
            value: ei / ctx.g_min,
            ei,
            predicted_draws: ctx.g_min,
            cold_start: true,
        }),
    }
}

/// Expected improvement per unit of a fixed cost model `c(x) > 0`.
pub fn eis_acquisition<C: Fn(&[f64]) -> f64>(x: &[f64], ctx: &AcquisitionContext<'_>, duration: C) -> Result<f64> {
    let c = duration(x);
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("duration model must be positive, got {c}")));
    }
    Ok(ei_at(x, ctx)? / c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcquisitionOptimizerOptions {
    /// Uniform random seeds (the incumbent, when supplied, is added on top).
    pub restarts: usize,
    /// How many of the best seeds are refined coordinate-wise.
    pub refine: usize,
    /// Coordinate sweeps per refined seed; each sweep narrows the search window.
    pub sweeps: usize,
}

impl Default for AcquisitionOptimizerOptions {
    fn default() -> Self {
        Self { restarts: 32, refine: 4, sweeps: 4 }
    }
}

struct Tracker<F> {
    acq: F,
    best_x: Vec<f64>,
    best_v: f64,
}

impl<F: FnMut(&[f64]) -> f64> Tracker<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        let v = (self.acq)(x);
        let v = if v.is_finite() { v } else { f64::NEG_INFINITY };
        if v > self.best_v {
            self.best_v = v;
            self.best_x = x.to_vec();
        }
        v
    }
}

/// Multistart maximisation: `restarts` uniform seeds plus the incumbent, then
/// coordinate-wise golden-section refinement of the best few seeds.
///
/// The returned point is the best over every evaluation made.
pub fn optimize_acquisition<F, R>(
    acq: F,
    bounds: &Bounds,
    options: &AcquisitionOptimizerOptions,
    incumbent: Option<&[f64]>,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if options.restarts == 0 {
        return Err(Error::InvalidArgument("acquisition optimizer needs at least one restart".into()));
    }
    let mut tracker = Tracker { acq, best_x: Vec::new(), best_v: f64::NEG_INFINITY };
    let mut seeds: Vec<(Vec<f64>, f64)> = Vec::with_capacity(options.restarts + 1);
    for _ in 0..options.restarts {
        let x = bounds.sample(rng);
        let v = tracker.eval(&x);
        seeds.push((x, v));
    }
    if let Some(inc) = incumbent {
        let mut x = inc.to_vec();
        bounds.clamp(&mut x);
        let v = tracker.eval(&x);
        seeds.push((x, v));
    }
    // stable sort keeps seed order among ties
    seeds.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));

    for (x0, v0) in seeds.into_iter().take(options.refine.max(1)) {
        if !v0.is_finite() {
            continue;
        }
        let mut x = x0;
        let mut v = v0;
        for sweep in 0..options.sweeps.max(1) {
            for d in 0..bounds.dim() {
                let (lo, hi) = (bounds.lower[d], bounds.upper[d]);
                if hi <= lo {
                    continue;
                }
                let half = (hi - lo) * 0.5f64.powi(2 * sweep as i32);
                let a = (x[d] - half).max(lo);
                let b = (x[d] + half).min(hi);
                let tol = 1e-7 * (hi - lo);
                let mut probe = x.clone();
                let (t, vt) = golden_section_max(
                    |t| {
                        probe[d] = t;
                        tracker.eval(&probe)
                    },
                    a,
                    b,
                    tol,
                );
                if vt > v {
                    x[d] = t;
                    v = vt;
                }
            }
        }
    }
    if !tracker.best_v.is_finite() {
        return Err(Error::AcquisitionNonFinite);
    }
    Ok(tracker.best_x)
}

/// Golden-section search for a maximum of `g` on `[a, b]`.
fn golden_section_max<G: FnMut(f64) -> f64>(mut g: G, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut gc = g(c);
    let mut gd = g(d);
    while (b - a) > tol {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
    }
    if gc >= gd {
        (c, gc)
    } else {
        (d, gd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{KernelFamily, KernelSpec, TrainingSet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pi_reference_points() {
        assert!((prob_improvement(3.0, 1.0, 3.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((prob_improvement(1.959_964, 1.0, 0.0).unwrap() - 0.975).abs() < 1e-6);
        assert!(prob_improvement(-10.0, 1.0, 0.0).unwrap() < 1e-22);
        assert!(prob_improvement(0.0, 0.0, 0.0).is_err());
        assert!(prob_improvement(f64::NAN, 1.0, 0.0).is_err());
    }

    #[test]
    fn ei_reference_points() {
        assert_eq!(expected_improvement(5.0, 0.0, 3.0).unwrap(), 2.0);
        assert_eq!(expected_improvement(1.0, 0.0, 3.0).unwrap(), 0.0);
        assert!((expected_improvement(0.0, 1.0, 0.0).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!(expected_improvement(0.0, -1.0, 0.0).is_err());
        assert!(expected_improvement(f64::INFINITY, 1.0, 0.0).is_err());
    }

    #[test]
    fn ei_log_branch_is_continuous() {
        let s = 1.0;
        let a = expected_improvement(-8.0 + 1e-9, s, 0.0).unwrap();
        let b = expected_improvement(-8.0 - 1e-9, s, 0.0).unwrap();
        assert!((a / b - 1.0).abs() < 1e-6, "{a} {b}");
        // far tail: positive, tiny, no NaN
        let far = expected_improvement(-35.0, 1.0, 0.0).unwrap();
        assert!(far > 0.0 && far < 1e-260);
    }

    #[test]
    fn boop_divides_by_predicted_draws() {
        let t = TrainingSet::new(vec![vec![0.2], vec![0.8]], vec![0.0, 1.0], vec![0.01, 0.01]).unwrap();
        let gp = GpModel::new(t, KernelSpec::new(KernelFamily::Matern52, 1.0, 0.3).unwrap(), 0.5, 0.0, None).unwrap();
        let ctx = AcquisitionContext { f_max: 1.0, surrogate: &gp, effort: None, g_min: 3000.0 };
        let s = boop_acquisition(&[0.5], &ctx).unwrap();
        assert!(s.cold_start);
        assert!((s.value - s.ei / 3000.0).abs() < 1e-18);
        let unit = eis_acquisition(&[0.5], &ctx, |_| 1.0).unwrap();
        assert_eq!(unit, s.ei);
        let doubled = eis_acquisition(&[0.5], &ctx, |_| 2.0).unwrap();
        assert!((doubled - unit / 2.0).abs() < 1e-18);
        assert!(eis_acquisition(&[0.5], &ctx, |_| 0.0).is_err());
    }

    #[test]
    fn optimizer_finds_interior_quadratic_max() {
        let b = Bounds::new(vec![-1.0, 0.0, 2.0], vec![1.0, 3.0, 5.0]).unwrap();
        let x0 = [0.3, 1.7, 4.1];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = optimize_acquisition(
            |x: &[f64]| -x.iter().zip(&x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            &b,
            &AcquisitionOptimizerOptions::default(),
            None,
            &mut rng,
        )
        .unwrap();
        let err = x.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{x:?}");
    }

    #[test]
    fn optimizer_reaches_boundary_and_handles_flat() {
        let b = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let opts = AcquisitionOptimizerOptions::default();
        let x = optimize_acquisition(|x: &[f64]| x[0], &b, &opts, None, &mut rng).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-5);
        let x = optimize_acquisition(|_: &[f64]| 7.0, &b, &opts, None, &mut rng).unwrap();
        assert!(b.contains(&x));
        let err = optimize_acquisition(|_: &[f64]| f64::NAN, &b, &opts, None, &mut rng);
        assert!(matches!(err, Err(Error::AcquisitionNonFinite)));
    }

    #[test]
    fn optimizer_beats_every_seed() {
        let b = Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let f = |x: &[f64]| (8.0 * x[0]).sin() * (5.0 * x[1]).cos() + x[0];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let opts = AcquisitionOptimizerOptions::default();
        let x = optimize_acquisition(f, &b, &opts, Some(&[0.5, 0.5]), &mut rng).unwrap();
        let best = f(&x);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..opts.restarts {
            let s = b.sample(&mut rng);
            assert!(best >= f(&s));
        }
        assert!(best >= f(&[0.5, 0.5]));
    }
}
