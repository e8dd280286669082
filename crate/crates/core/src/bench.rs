//! Synthetic objectives whose "estimator" is the running mean of an AR(1) chain, so
//! strategies can be compared without real MCMC.
//!
//! The standard objective on `[0,1]²` is
//! `-3000 + 40 exp(-((x1-0.3)²/(2·0.12²) + (x2-0.65)²/(2·0.35²))) + 25 exp(-|x-(0.8,0.2)|²/(2·0.1²))`:
//! a broad maximum with a flat ridge along `x2` and a narrower local maximum. The
//! integrated autocorrelation time is `1 + 9 x2`, so high `x2` is expensive to pin down.

use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::driver::{optimize, BoopConfig, Strategy};
use crate::evaluator::{EstimateSnapshot, PrecisionEstimator};
use crate::stats::median;
use crate::{seeded_rng, Bounds, Error, Result};

type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct SyntheticObjective {
    true_function: ScalarField,
    iact_profile: ScalarField,
    /// Stationary standard deviation of the simulated chain.
    pub noise_sd: f64,
    pub bounds: Bounds,
}

impl std::fmt::Debug for SyntheticObjective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyntheticObjective").field("noise_sd", &self.noise_sd).field("bounds", &self.bounds).finish()
    }
}

impl SyntheticObjective {
    pub fn new<F, T>(true_function: F, iact_profile: T, noise_sd: f64, bounds: Bounds) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        T: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise_sd must be >= 0, got {noise_sd}")));
        }
        Ok(Self { true_function: Arc::new(true_function), iact_profile: Arc::new(iact_profile), noise_sd, bounds })
    }

    pub fn standard() -> Self {
        let f = |x: &[f64]| {
            let broad = ((x[0] - 0.3).powi(2) / (2.0 * 0.12f64.powi(2)) + (x[1] - 0.65).powi(2) / (2.0 * 0.35f64.powi(2))).exp();
            let narrow = (((x[0] - 0.8).powi(2) + (x[1] - 0.2).powi(2)) / (2.0 * 0.1f64.powi(2))).exp();
            -3000.0 + 40.0 / broad + 25.0 / narrow
        };
        let bounds = Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).expect("unit square");
        Self::new(f, |x: &[f64]| 1.0 + 9.0 * x[1], 30.0, bounds).expect("valid standard objective")
    }

    /// Starting point used to measure progress on the standard objective.
    pub fn reference_point() -> Vec<f64> {
        vec![0.1, 0.5]
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.true_function)(x)
    }

    /// IACT at `x`, floored at 1.
    pub fn iact(&self, x: &[f64]) -> f64 {
        (self.iact_profile)(x).max(1.0)
    }

    pub fn estimator(&self, x: &[f64]) -> SimulatedMcmcEstimator {
        SimulatedMcmcEstimator::new(self.value(x), self.noise_sd, self.iact(x))
    }

    /// Maximiser of the true function: a 401-point-per-axis grid, then three rounds of
    /// local grid refinement.
    pub fn true_maximum(&self) -> (Vec<f64>, f64) {
        let d = self.bounds.dim();
        let mut width: Vec<f64> = (0..d).map(|i| self.bounds.upper[i] - self.bounds.lower[i]).collect();
        let mut center: Vec<f64> = (0..d).map(|i| 0.5 * (self.bounds.lower[i] + self.bounds.upper[i])).collect();
        let mut best = (center.clone(), self.value(&center));
        for per_axis in [401usize, 41, 41, 41] {
            let total = per_axis.pow(d as u32);
            for idx in 0..total {
                let mut rem = idx;
                let mut x = vec![0.0; d];
                for i in 0..d {
                    let k = rem % per_axis;
                    rem /= per_axis;
                    x[i] = center[i] - 0.5 * width[i] + width[i] * k as f64 / (per_axis - 1) as f64;
                }
                self.bounds.clamp(&mut x);
                let v = self.value(&x);
                if v > best.1 {
                    best = (x, v);
                }
            }
            center = best.0.clone();
            let shrink = 4.0 / (per_axis - 1) as f64;
            width.iter_mut().for_each(|w| *w *= shrink);
        }
        best
    }
}

/// Running mean of a stationary AR(1) chain with mean `μ`, marginal sd `σ` and
/// IACT `τ`, i.e. `ρ = (τ-1)/(τ+1)`. The reported standard error is the exact
/// asymptotic `σ sqrt(τ / G)`.
#[derive(Debug, Clone)]
pub struct SimulatedMcmcEstimator {
    mean: f64,
    sd: f64,
    iact: f64,
    rho: f64,
    state: Option<f64>,
    deviation_sum: f64,
    used: usize,
}

impl SimulatedMcmcEstimator {
    pub fn new(mean: f64, sd: f64, iact: f64) -> Self {
        let iact = iact.max(1.0);
        Self { mean, sd, iact, rho: (iact - 1.0) / (iact + 1.0), state: None, deviation_sum: 0.0, used: 0 }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    fn snapshot(&self) -> EstimateSnapshot {
        let g = self.used as f64;
        EstimateSnapshot { estimate: self.mean + self.deviation_sum / g, se: self.sd * (self.iact / g).sqrt() }
    }
}

impl PrecisionEstimator for SimulatedMcmcEstimator {
    fn extend(&mut self, draws: usize, rng: &mut dyn RngCore) -> Result<EstimateSnapshot> {
        if draws == 0 && self.used == 0 {
            return Err(Error::InvalidArgument("first extension needs at least one draw".into()));
        }
        let innovation = self.sd * (1.0 - self.rho * self.rho).sqrt();
        for _ in 0..draws {
            let z: f64 = rng.sample(StandardNormal);
            let e = match self.state {
                None => self.sd * z,
                Some(prev) => self.rho * prev + innovation * z,
            };
            self.state = Some(e);
            self.deviation_sum += e;
        }
        self.used += draws;
        Ok(self.snapshot())
    }

    fn draws_used(&self) -> usize {
        self.used
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySpec {
    pub name: String,
    pub strategy: Strategy,
    pub config: BoopConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iter: usize,
    pub cum_draws: usize,
    /// Estimated incumbent value.
    pub f_max: f64,
    /// True function at the incumbent location.
    pub true_at_incumbent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyCurve {
    pub name: String,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

impl StrategyCurve {
    /// First cumulative draw count at which the incumbent's true value reaches `target`.
    pub fn draws_to(&self, target: f64) -> Option<usize> {
        self.points.iter().find(|p| p.true_at_incumbent >= target).map(|p| p.cum_draws)
    }

    pub fn final_true(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.true_at_incumbent)
    }

    pub fn total_draws(&self) -> usize {
        self.points.last().map_or(0, |p| p.cum_draws)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub name: String,
    /// Median over seeds; runs that never reach the target count as `+inf`.
    pub median_draws_to_target: f64,
    pub reached: usize,
    pub median_final_true: f64,
    pub median_total_draws: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub f_start: f64,
    pub f_opt: f64,
    /// `f_start + gap_fraction · (f_opt - f_start)`.
    pub target: f64,
    pub curves: Vec<StrategyCurve>,
    pub summaries: Vec<StrategySummary>,
}

/// Runs every strategy on every seed. The same seed drives every strategy, so the
/// initial random evaluations are paired. Seeds run in parallel.
pub fn compare_strategies(
    objective: &SyntheticObjective,
    strategies: &[StrategySpec],
    seeds: &[u64],
    start: &[f64],
    gap_fraction: f64,
) -> Result<ComparisonReport> {
    if strategies.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("need at least one strategy and one seed".into()));
    }
    let f_start = objective.value(start);
    let (_, f_opt) = objective.true_maximum();
    let target = f_start + gap_fraction * (f_opt - f_start);
    let jobs: Vec<(usize, u64)> = (0..strategies.len()).flat_map(|s| seeds.iter().map(move |&seed| (s, seed))).collect();
    let curves = jobs
        .par_iter()
        .map(|&(s, seed)| {
            let spec = &strategies[s];
            let res = optimize(spec.strategy, |x: &[f64]| Ok(objective.estimator(x)), &spec.config, &mut seeded_rng(seed, 0))?;
            let mut best_x: Vec<f64> = Vec::new();
            let points = res
                .trace
                .records
                .iter()
                .map(|r| {
                    if r.f_hat >= r.f_max {
                        best_x = r.x.clone();
                    }
                    CurvePoint { iter: r.iter, cum_draws: r.cum_draws, f_max: r.f_max, true_at_incumbent: objective.value(&best_x) }
                })
                .collect();
            Ok(StrategyCurve { name: spec.name.clone(), seed, points })
        })
        .collect::<Result<Vec<_>>>()?;
    let summaries = strategies
        .iter()
        .map(|spec| {
            let mine: Vec<&StrategyCurve> = curves.iter().filter(|c| c.name == spec.name).collect();
            let draws: Vec<f64> = mine.iter().map(|c| c.draws_to(target).map_or(f64::INFINITY, |d| d as f64)).collect();
            StrategySummary {
                name: spec.name.clone(),
                median_draws_to_target: median(&draws).unwrap_or(f64::NAN),
                reached: draws.iter().filter(|d| d.is_finite()).count(),
                median_final_true: median(&mine.iter().map(|c| c.final_true()).collect::<Vec<_>>()).unwrap_or(f64::NAN),
                median_total_draws: median(&mine.iter().map(|c| c.total_draws() as f64).collect::<Vec<_>>()).unwrap_or(f64::NAN),
            }
        })
        .collect();
    Ok(ComparisonReport { f_start, f_opt, target, curves, summaries })
}
