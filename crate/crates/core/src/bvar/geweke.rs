//! Joint-distribution test of the steady-state Gibbs sampler.
//!
//! The marginal-conditional simulator draws `θ ~ p(θ)`, `y ~ p(y|θ)` independently.
//! The successive-conditional simulator alternates one Gibbs sweep `θ ~ p(θ|y)` with
//! `y ~ p(y|θ)`. Both target the same joint, so moments of `θ` must agree.

use nalgebra::DMatrix;
use rand::RngCore;

use super::{BvarData, BvarState, OwnLagScaling, ShrinkageParams, SigmaPrior, SteadyStateBvar, SteadyStatePrior};
use crate::stats::mean;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeConfig {
    pub n: usize,
    pub p: usize,
    pub t: usize,
    pub draws: usize,
    pub lam: ShrinkageParams,
    /// Inverse-Wishart degrees of freedom; the scale is `(ν0 - n - 1) I`.
    pub nu0: f64,
    /// Batches used for the autocorrelation-robust variance of the successive chain.
    pub batches: usize,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        Self {
            n: 2,
            p: 1,
            t: 40,
            draws: 5000,
            lam: ShrinkageParams { lambda1: 0.3, lambda2: 0.5, lambda3: 1.0 },
            nu0: 12.0,
            batches: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeReport {
    pub names: Vec<String>,
    pub z: Vec<f64>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.z.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

const NAMES: [&str; 6] = ["pi11", "pi11^2", "sigma11", "sigma11^2", "psi1", "psi1^2"];

fn monitored(s: &BvarState) -> [f64; 6] {
    let (a, b, c) = (s.pi[(0, 0)], s.sigma[(0, 0)], s.psi[(0, 0)]);
    [a, a * a, b, b * b, c, c * c]
}

/// Variance of the mean of an autocorrelated series by non-overlapping batch means.
fn batch_means_variance(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&x[b * size..(b + 1) * size])).collect();
    let m = mean(&means);
    let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (batches - 1) as f64;
    var / batches as f64
}

fn iid_mean_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / ((x.len() - 1) * x.len()) as f64
}

/// Runs both simulators for `config.draws` draws each and returns the z-score of the
/// difference in means of each monitored moment.
pub fn geweke_test(config: &GewekeConfig, rng: &mut dyn RngCore) -> Result<GewekeReport> {
    let (n, p, t) = (config.n, config.p, config.t);
    let prior = SteadyStatePrior {
        psi_mean: vec![0.0; n],
        psi_sd: vec![1.0; n],
        pi_mean: vec![0.0; n * n * p],
        sigma: SigmaPrior::InverseWishart {
            scale: DMatrix::identity(n, n) * (config.nu0 - n as f64 - 1.0),
            dof: config.nu0,
        },
    };
    // initial observations are fixed constants; the rest is replaced before use
    let placeholder = DMatrix::from_fn(t, n, |i, j| ((i * n + j) as f64 * 0.7).sin());
    let data = BvarData::with_intercept(placeholder, p)?;
    let sd = vec![1.0; n];
    let base = SteadyStateBvar::new(data, prior, &config.lam, Some(&sd), OwnLagScaling::Plain)?;

    let mut marginal: Vec<Vec<f64>> = vec![Vec::with_capacity(config.draws); NAMES.len()];
    for _ in 0..config.draws {
        let theta = base.sample_prior(rng)?;
        for (k, v) in monitored(&theta).into_iter().enumerate() {
            marginal[k].push(v);
        }
    }

    let mut successive: Vec<Vec<f64>> = vec![Vec::with_capacity(config.draws); NAMES.len()];
    let mut theta = base.sample_prior(rng)?;
    let mut model = base.with_observations(base.simulate_observations(&theta, rng)?)?;
    for _ in 0..config.draws {
        theta = model.gibbs_sweep(&theta, rng)?;
        model = base.with_observations(base.simulate_observations(&theta, rng)?)?;
        for (k, v) in monitored(&theta).into_iter().enumerate() {
            successive[k].push(v);
        }
    }

    let z = (0..NAMES.len())
        .map(|k| {
            let var = iid_mean_variance(&marginal[k]) + batch_means_variance(&successive[k], config.batches);
            (mean(&marginal[k]) - mean(&successive[k])) / var.sqrt()
        })
        .collect();
    Ok(GewekeReport { names: NAMES.iter().map(|s| s.to_string()).collect(), z })
}
