//! Prediction of the number of draws an early-stopped evaluation will consume.
//!
//! A GP with a homoscedastic nugget is fitted to `log G` against covariates
//! `z = (x, d, s, u)`, where `d = m(x) - f_max`, `s` is the surrogate posterior sd
//! and `u = d / s`. The point prediction is `exp` of the posterior mean (the
//! log-normal median), clamped to the feasible draw range.

use rand::Rng;

use crate::gp::{
    gp_fit_hyperparams, FitOptions, GpModel, GpPosteriorPoint, HyperBounds, InputTransform, KernelFamily,
    KernelSpec, TrainingSet,
};
use crate::{Error, Result};

/// `|u|` at `s = 0`.
pub const U_CAP: f64 = 50.0;

/// Records needed before the effort model is fitted.
pub const MIN_EFFORT_RECORDS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct EffortCovariates {
    pub x: Vec<f64>,
    pub d: f64,
    pub s: f64,
    pub u: f64,
}

impl EffortCovariates {
    /// Concatenation `(x, d, s, u)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut z = self.x.clone();
        z.extend([self.d, self.s, self.u]);
        z
    }
}

pub fn build_covariates(x: &[f64], posterior: &GpPosteriorPoint, f_max: f64) -> Result<EffortCovariates> {
    if !f_max.is_finite() || !posterior.mean.is_finite() || !posterior.sd.is_finite() {
        return Err(Error::NonFinite("effort covariates"));
    }
    let d = posterior.mean - f_max;
    let s = posterior.sd.max(0.0);
    let u = if s > 0.0 {
        d / s
    } else if d == 0.0 {
        0.0
    } else {
        d.signum() * U_CAP
    };
    Ok(EffortCovariates { x: x.to_vec(), d, s, u })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffortRecord {
    pub z: Vec<f64>,
    pub log_g: f64,
}

impl EffortRecord {
    pub fn new(z: &EffortCovariates, draws: usize) -> Self {
        Self { z: z.to_vec(), log_g: (draws as f64).ln() }
    }
}

#[derive(Debug, Clone)]
pub struct EffortModel {
    gp: GpModel,
    g_min: f64,
    g_max: f64,
}

impl EffortModel {
    /// Fits kernel scale, length scale and nugget by GP marginal likelihood
    /// (Matérn-5/2 on z-scored covariates, prior mean = mean of `log G`).
    pub fn fit<R: Rng + ?Sized>(records: &[EffortRecord], g_min: f64, g_max: f64, rng: &mut R) -> Result<Self> {
        if records.len() < MIN_EFFORT_RECORDS {
            return Err(Error::ColdStart { required: MIN_EFFORT_RECORDS, available: records.len() });
        }
        let train = Self::training_set(records, g_min, g_max)?;
        let spread = crate::stats::sample_sd(train.observations()).max(0.05);
        let bounds = HyperBounds {
            sigma_f: (0.01 * spread, 10.0 * spread),
            ell: (0.05, 50.0),
            nugget: Some((1e-8, 1.0)),
        };
        let options = FitOptions {
            prior_mean: train.observation_mean(),
            transform: Some(InputTransform::standardize(train.inputs())),
            ..FitOptions::with_prior_mean(0.0)
        };
        let fit = gp_fit_hyperparams(&train, KernelFamily::Matern52, &bounds, &options, rng)?;
        let gp = GpModel::new(train, fit.kernel, options.prior_mean, fit.nugget, options.transform)?;
        Ok(Self { gp, g_min, g_max })
    }

    /// Model with given hyperparameters; accepts any number of records.
    pub fn with_hyperparams(
        records: &[EffortRecord],
        kernel: KernelSpec,
        nugget: f64,
        g_min: f64,
        g_max: f64,
    ) -> Result<Self> {
        let train = Self::training_set(records, g_min, g_max)?;
        let transform = Some(InputTransform::standardize(train.inputs()));
        let gp = GpModel::new(train.clone(), kernel, train.observation_mean(), nugget, transform)?;
        Ok(Self { gp, g_min, g_max })
    }

    fn training_set(records: &[EffortRecord], g_min: f64, g_max: f64) -> Result<TrainingSet> {
        if !(g_min >= 1.0 && g_max >= g_min) {
            return Err(Error::InvalidArgument(format!("need 1 <= g_min <= g_max, got [{g_min}, {g_max}]")));
        }
        let floor = g_min.ln() - 1e-9;
        if let Some(r) = records.iter().find(|r| !(r.log_g >= floor)) {
            return Err(Error::InvalidArgument(format!("effort record with log G {} below log(g_min)", r.log_g)));
        }
        TrainingSet::new(
            records.iter().map(|r| r.z.clone()).collect(),
            records.iter().map(|r| r.log_g).collect(),
            vec![0.0; records.len()],
        )
    }

    /// Posterior mean of `log G` at the covariates.
    pub fn predict_log_mean(&self, z: &EffortCovariates) -> Result<f64> {
        Ok(self.gp.predict(&z.to_vec())?.mean)
    }

    /// `exp(m_G(z))` clamped to `[g_min, g_max]`.
    pub fn predict(&self, z: &EffortCovariates) -> Result<f64> {
        Ok(self.clamp(self.predict_log_mean(z)?.exp()))
    }

    fn clamp(&self, g: f64) -> f64 {
        if g.is_nan() {
            self.g_max
        } else {
            g.clamp(self.g_min, self.g_max)
        }
    }

    pub fn nugget(&self) -> f64 {
        self.gp.nugget()
    }

    pub fn kernel(&self) -> &KernelSpec {
        self.gp.kernel()
    }
}

/// Fits the effort model, or reports a cold start when there are too few records.
pub fn effort_fit<R: Rng + ?Sized>(records: &[EffortRecord], g_min: f64, g_max: f64, rng: &mut R) -> Result<EffortModel> {
    EffortModel::fit(records, g_min, g_max, rng)
}

pub fn effort_predict(model: &EffortModel, z: &EffortCovariates) -> Result<f64> {
    model.predict(z)
}
