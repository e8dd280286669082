//! Run configuration, read from TOML. Every field has a default, so an empty file is a
//! valid configuration for the synthetic objective.

use std::path::{Path, PathBuf};

use boop_core::acquisition::AcquisitionOptimizerOptions;
use boop_core::bvar::OwnLagScaling;
use boop_core::driver::{BoopConfig, GridAxis, Strategy};
use boop_core::Bounds;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnSpec, Frequency, Transform};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Log marginal likelihood of the steady-state BVAR over `(λ1, λ2, λ3)`.
    Bvar,
    /// Two-dimensional synthetic objective with a known optimum.
    #[default]
    Bench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum StrategyName {
    #[default]
    #[serde(rename = "boop")]
    Boop,
    #[serde(rename = "bo-ei")]
    BoEi,
}

impl From<StrategyName> for Strategy {
    fn from(s: StrategyName) -> Self {
        match s {
            StrategyName::Boop => Strategy::Boop,
            StrategyName::BoEi => Strategy::BoEi,
        }
    }
}

impl From<Strategy> for StrategyName {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Boop => StrategyName::Boop,
            Strategy::BoEi => StrategyName::BoEi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LagScaling {
    #[default]
    Plain,
    BySeriesScale,
}

impl From<LagScaling> for OwnLagScaling {
    fn from(s: LagScaling) -> Self {
        match s {
            LagScaling::Plain => OwnLagScaling::Plain,
            LagScaling::BySeriesScale => OwnLagScaling::BySeriesScale,
        }
    }
}

/// Inclusive `lower..=upper` in steps of `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
}

impl AxisSpec {
    pub const fn new(lower: f64, upper: f64, step: f64) -> Self {
        Self { lower, upper, step }
    }

    pub fn axis(&self) -> GridAxis {
        GridAxis { lower: self.lower, upper: self.upper, step: self.step }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub strategy: StrategyName,
    pub alpha: f64,
    pub g_min: usize,
    /// Burn-in of each Chib run (BVAR objective only).
    pub burn: usize,
    pub batch: usize,
    pub g_max: usize,
    /// Acquisition-driven evaluations after the `j0` initial ones.
    pub iterations: usize,
    pub j0: usize,
    pub acquisition_restarts: usize,
    pub acquisition_refine: usize,
    pub fit_starts: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let acq = AcquisitionOptimizerOptions::default();
        Self {
            strategy: StrategyName::Boop,
            alpha: 0.001,
            g_min: 3000,
            burn: 2500,
            batch: 200,
            g_max: 10_000,
            iterations: 150,
            j0: 2,
            acquisition_restarts: acq.restarts,
            acquisition_refine: acq.refine,
            fit_starts: 6,
        }
    }
}

impl OptimizerSection {
    pub fn boop_config(&self, bounds: Bounds) -> BoopConfig {
        BoopConfig {
            alpha: self.alpha,
            g_min: self.g_min,
            batch: self.batch,
            g_max: self.g_max,
            iterations: self.iterations + self.j0,
            j0: self.j0,
            acquisition: AcquisitionOptimizerOptions {
                restarts: self.acquisition_restarts,
                refine: self.acquisition_refine,
                ..AcquisitionOptimizerOptions::default()
            },
            fit_starts: self.fit_starts,
            ..BoopConfig::new(bounds)
        }
    }
}

/// Search box for `(λ1, λ2, λ3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    pub lambda1: [f64; 2],
    pub lambda2: [f64; 2],
    pub lambda3: [f64; 2],
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self { lambda1: [0.01, 5.0], lambda2: [0.01, 1.0], lambda3: [0.01, 5.0] }
    }
}

impl BoundsSection {
    pub fn bounds(&self) -> Result<Bounds, CliError> {
        let b = [self.lambda1, self.lambda2, self.lambda3];
        let (lo_cap, hi_cap) = ([0.0; 3], [5.0, 1.0, 5.0]);
        for (k, [lo, hi]) in b.iter().enumerate() {
            if !(*lo > lo_cap[k] && lo < hi && *hi <= hi_cap[k]) {
                return Err(CliError::Config(format!(
                    "bounds.lambda{} = [{lo}, {hi}] must satisfy 0 < lower < upper <= {}",
                    k + 1,
                    hi_cap[k]
                )));
            }
        }
        Bounds::new(b.iter().map(|v| v[0]).collect(), b.iter().map(|v| v[1]).collect())
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

/// One model variable: where it comes from and its steady-state prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelColumn {
    pub name: String,
    #[serde(default)]
    pub frequency: Frequency,
    #[serde(default)]
    pub transform: Transform,
    /// Prior mean of the variable's steady state.
    #[serde(default)]
    pub psi_mean: f64,
    #[serde(default = "default_psi_sd")]
    pub psi_sd: f64,
}

impl ModelColumn {
    pub fn spec(&self) -> ColumnSpec {
        ColumnSpec { name: self.name.clone(), frequency: self.frequency, transform: self.transform }
    }
}

fn default_psi_sd() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub lags: usize,
    pub columns: Vec<ModelColumn>,
    /// Prior means of `[Π_1 … Π_p]` row by row; zeros when absent.
    pub pi_mean: Option<Vec<f64>>,
    pub own_lag_scaling: LagScaling,
    /// Newey-West lag; chosen by AIC up to `q_max` when absent.
    pub nw_lag: Option<usize>,
    pub q_max: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { lags: 4, columns: Vec::new(), pi_mean: None, own_lag_scaling: LagScaling::Plain, nw_lag: None, q_max: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// One axis per objective dimension; per-objective defaults when absent.
    pub axes: Option<Vec<AxisSpec>>,
    /// Draws per grid point; `optimizer.g_max` when absent.
    pub draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    pub seeds: Vec<u64>,
    /// Acquisition-driven evaluations per run after the initial ones.
    pub iterations: usize,
    /// Fraction of the gap between the start value and the optimum that counts as reached.
    pub gap_fraction: f64,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self { seeds: (0..10).collect(), iterations: 38, gap_fraction: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceSection {
    /// Trace to fit; `--data` overrides.
    pub trace: Option<PathBuf>,
    /// Third coordinate held fixed for three-dimensional objectives.
    pub lambda3: f64,
    pub lambda1: Option<AxisSpec>,
    pub lambda2: Option<AxisSpec>,
}

impl Default for SurfaceSection {
    fn default() -> Self {
        Self { trace: None, lambda3: 1.0, lambda1: None, lambda2: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChibValidateSection {
    /// Seeds of the conjugate BVAR comparison.
    pub seeds: Vec<u64>,
    /// Sample size of the simulated conjugate data set.
    pub t: usize,
    /// Full and reduced run length, burn-in included.
    pub draws: usize,
    pub burn: usize,
    pub toy_replicates: usize,
    pub toy_draws: usize,
    pub toy_burn: usize,
    /// Smallest share of conjugate cases within three standard errors.
    pub min_pass_rate: f64,
}

impl Default for ChibValidateSection {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            t: 60,
            draws: 5000,
            burn: 500,
            toy_replicates: 50,
            toy_draws: 600,
            toy_burn: 100,
            min_pass_rate: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub objective: ObjectiveKind,
    /// Input CSV for the BVAR objective; `--data` overrides.
    pub data: Option<PathBuf>,
    pub optimizer: OptimizerSection,
    pub bounds: BoundsSection,
    pub model: ModelSection,
    pub grid: GridSection,
    pub benchmark: BenchmarkSection,
    pub surface: SurfaceSection,
    pub chib_validate: ChibValidateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            objective: ObjectiveKind::Bench,
            data: None,
            optimizer: OptimizerSection::default(),
            bounds: BoundsSection::default(),
            model: ModelSection::default(),
            grid: GridSection::default(),
            benchmark: BenchmarkSection::default(),
            surface: SurfaceSection::default(),
            chib_validate: ChibValidateSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub strategy: Option<StrategyName>,
    pub data: Option<PathBuf>,
    pub iterations: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        // every field is representable; a failure here is a programming error
        toml::to_string(self).expect("run configuration serializes to TOML")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(s) = o.strategy {
            self.optimizer.strategy = s;
        }
        if let Some(d) = &o.data {
            self.data = Some(d.clone());
        }
        if let Some(n) = o.iterations {
            self.optimizer.iterations = n;
            self.benchmark.iterations = n;
        }
    }

    /// Checks everything that does not require reading data.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: boop_core::Error| CliError::Config(e.to_string());
        let bounds = match self.objective {
            ObjectiveKind::Bvar => self.bounds.bounds()?,
            ObjectiveKind::Bench => boop_core::bench::SyntheticObjective::standard().bounds,
        };
        self.optimizer.boop_config(bounds).validate().map_err(cfg)?;
        if self.optimizer.j0 == 0 {
            return Err(CliError::Config("optimizer.j0 must be positive".into()));
        }
        if self.objective == ObjectiveKind::Bvar {
            let m = &self.model;
            if m.lags == 0 {
                return Err(CliError::Config("model.lags must be positive".into()));
            }
            if m.columns.is_empty() {
                return Err(CliError::Config("model.columns must list at least one variable".into()));
            }
            if let Some(pm) = &m.pi_mean {
                let n = m.columns.len();
                if pm.len() != n * n * m.lags {
                    return Err(CliError::Config(format!("model.pi_mean needs {} values, has {}", n * n * m.lags, pm.len())));
                }
            }
            if m.columns.iter().any(|c| !(c.psi_sd > 0.0 && c.psi_sd.is_finite())) {
                return Err(CliError::Config("model.columns psi_sd must be positive".into()));
            }
            if m.q_max == 0 && m.nw_lag.is_none() {
                return Err(CliError::Config("model.q_max must be positive".into()));
            }
            if self.optimizer.burn == 0 || self.optimizer.burn >= self.optimizer.g_min {
                return Err(CliError::Config("optimizer.burn must be positive and below g_min".into()));
            }
        }
        if let Some(axes) = &self.grid.axes {
            for a in axes {
                a.axis().points().map_err(cfg)?;
            }
        }
        if self.grid.draws == Some(0) {
            return Err(CliError::Config("grid.draws must be positive".into()));
        }
        let b = &self.benchmark;
        if b.seeds.is_empty() || !(b.gap_fraction > 0.0 && b.gap_fraction <= 1.0) {
            return Err(CliError::Config("benchmark needs seeds and gap_fraction in (0, 1]".into()));
        }
        let c = &self.chib_validate;
        if c.burn >= c.draws || c.toy_burn >= c.toy_draws || c.toy_replicates < 2 || !(0.0..=1.0).contains(&c.min_pass_rate) {
            return Err(CliError::Config("chib_validate: burn must be below draws and at least 2 toy replicates".into()));
        }
        for axis in [&self.surface.lambda1, &self.surface.lambda2].into_iter().flatten() {
            axis.axis().points().map_err(cfg)?;
        }
        Ok(())
    }
}
