//! Batch-wise evaluation with early stopping.
//!
//! An estimator is run to `g_min` draws and then extended in batches. At each
//! checkpoint the surrogate is conditioned on its existing data plus the running
//! estimate at `x` (with its current squared standard error), and the evaluation
//! stops once the probability of improving on `f_max` drops below `alpha`.

use rand::RngCore;

use crate::gp::GpModel;
use crate::stats::norm_cdf;
use crate::{Error, Result};

/// Running estimate and its standard error at a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateSnapshot {
    pub estimate: f64,
    pub se: f64,
}

/// An estimator whose precision grows with the number of simulation draws.
pub trait PrecisionEstimator {
    /// Consumes `draws` further draws and returns the running estimate.
    fn extend(&mut self, draws: usize, rng: &mut dyn RngCore) -> Result<EstimateSnapshot>;

    /// Cumulative draws consumed, burn-in included.
    fn draws_used(&self) -> usize;
}

impl<E: PrecisionEstimator + ?Sized> PrecisionEstimator for Box<E> {
    fn extend(&mut self, draws: usize, rng: &mut dyn RngCore) -> Result<EstimateSnapshot> {
        (**self).extend(draws, rng)
    }

    fn draws_used(&self) -> usize {
        (**self).draws_used()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationConfig {
    pub alpha: f64,
    pub g_min: usize,
    pub batch: usize,
    pub g_max: usize,
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if self.g_min == 0 || self.batch == 0 || self.g_max < self.g_min {
            return Err(Error::InvalidArgument(format!(
                "need g_min >= 1, batch >= 1 and g_max >= g_min (got {}, {}, {})",
                self.g_min, self.batch, self.g_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOutcome {
    pub x: Vec<f64>,
    pub f_hat: f64,
    pub se: f64,
    pub g_used: usize,
    pub stopped_early: bool,
    /// PI at the final checkpoint; `None` for full-budget evaluations.
    pub pi_at_stop: Option<f64>,
}

/// Probability of improvement at `x` after conditioning the surrogate on the
/// in-progress estimate. The shared surrogate is not modified.
pub fn provisional_pi(surrogate: &GpModel, x: &[f64], snapshot: EstimateSnapshot, f_max: f64) -> Result<f64> {
    let updated = surrogate.with_observation(x, snapshot.estimate, snapshot.se * snapshot.se)?;
    let post = updated.predict(x)?;
    if !post.mean.is_finite() {
        return Err(Error::NonFinite("provisional surrogate mean"));
    }
    if post.sd > 0.0 {
        Ok(norm_cdf((post.mean - f_max) / post.sd))
    } else if post.mean > f_max {
        Ok(1.0)
    } else if post.mean < f_max {
        Ok(0.0)
    } else {
        Ok(0.5)
    }
}

fn checked_extend<E: PrecisionEstimator + ?Sized>(
    estimator: &mut E,
    draws: usize,
    rng: &mut dyn RngCore,
) -> Result<EstimateSnapshot> {
    let snap = estimator
        .extend(draws, rng)
        .map_err(|e| Error::Estimator { draws: estimator.draws_used(), source: Box::new(e) })?;
    if !snap.estimate.is_finite() || !(snap.se >= 0.0 && snap.se.is_finite()) {
        return Err(Error::Estimator {
            draws: estimator.draws_used(),
            source: Box::new(Error::NonFinite("estimate or standard error")),
        });
    }
    Ok(snap)
}

/// Runs the estimator to `g_min`, then in batches of `batch` (the last one truncated at
/// `g_max`), stopping at the first checkpoint whose provisional PI is below `alpha`.
pub fn evaluate_with_early_stopping<E: PrecisionEstimator + ?Sized>(
    estimator: &mut E,
    x: &[f64],
    surrogate: &GpModel,
    f_max: f64,
    cfg: &EvaluationConfig,
    rng: &mut dyn RngCore,
) -> Result<EvaluationOutcome> {
    cfg.validate()?;
    if !f_max.is_finite() {
        return Err(Error::NonFinite("incumbent"));
    }
    let mut snap = checked_extend(estimator, cfg.g_min, rng)?;
    loop {
        let pi = provisional_pi(surrogate, x, snap, f_max)?;
        let used = estimator.draws_used();
        let stop = pi < cfg.alpha;
        if stop || used >= cfg.g_max {
            return Ok(EvaluationOutcome {
                x: x.to_vec(),
                f_hat: snap.estimate,
                se: snap.se,
                g_used: used,
                stopped_early: stop,
                pi_at_stop: Some(pi),
            });
        }
        snap = checked_extend(estimator, cfg.batch.min(cfg.g_max - used), rng)?;
    }
}

/// Runs the estimator straight to `g_max` draws.
pub fn evaluate_full_budget<E: PrecisionEstimator + ?Sized>(
    estimator: &mut E,
    x: &[f64],
    g_max: usize,
    rng: &mut dyn RngCore,
) -> Result<EvaluationOutcome> {
    if g_max == 0 {
        return Err(Error::InvalidArgument("g_max must be positive".into()));
    }
    let snap = checked_extend(estimator, g_max, rng)?;
    Ok(EvaluationOutcome {
        x: x.to_vec(),
        f_hat: snap.estimate,
        se: snap.se,
        g_used: estimator.draws_used(),
        stopped_early: false,
        pi_at_stop: None,
    })
}
