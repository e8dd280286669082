//! Outer optimization loops: precision-aware BO (early stopping plus effort-normalised
//! EI), plain BO-EI at full budget, and exhaustive grid search.

use std::io::{BufRead, Write};

use rand::RngCore;

use crate::acquisition::{boop_acquisition, ei_at, optimize_acquisition, AcquisitionContext, AcquisitionOptimizerOptions};
use crate::effort::{build_covariates, EffortModel, EffortRecord};
use crate::evaluator::{evaluate_full_budget, evaluate_with_early_stopping, EvaluationConfig, EvaluationOutcome, PrecisionEstimator};
use crate::gp::{gp_fit_hyperparams, FitOptions, GpModel, HyperBounds, InputTransform, KernelFamily, TrainingSet};
use crate::{Bounds, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// EI divided by predicted draws, with early stopping.
    Boop,
    /// Plain EI, every evaluation at `g_max`.
    BoEi,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Boop => "boop",
            Strategy::BoEi => "bo-ei",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boop" => Ok(Strategy::Boop),
            "bo-ei" => Ok(Strategy::BoEi),
            other => Err(Error::InvalidArgument(format!("unknown strategy '{other}' (expected boop or bo-ei)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoopConfig {
    pub bounds: Bounds,
    pub alpha: f64,
    pub g_min: usize,
    pub batch: usize,
    pub g_max: usize,
    /// Total evaluations, the `j0` initial ones included.
    pub iterations: usize,
    /// Random initial evaluations at full budget.
    pub j0: usize,
    pub acquisition: AcquisitionOptimizerOptions,
    /// Multistarts for each surrogate and effort hyperparameter fit.
    pub fit_starts: usize,
}

impl BoopConfig {
    /// `α = 0.001`, `g_min = 3000`, batches of 200, `g_max = 10000`, 150 evaluations, two
    /// initial draws.
    pub fn new(bounds: Bounds) -> Self {
        Self {
            bounds,
            alpha: 0.001,
            g_min: 3000,
            batch: 200,
            g_max: 10_000,
            iterations: 150,
            j0: 2,
            acquisition: AcquisitionOptimizerOptions::default(),
            fit_starts: 6,
        }
    }

    pub fn evaluation(&self) -> EvaluationConfig {
        EvaluationConfig { alpha: self.alpha, g_min: self.g_min, batch: self.batch, g_max: self.g_max }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.j0 < 2 {
            return Err(Error::InvalidArgument(format!("j0 must be at least 2, got {}", self.j0)));
        }
        if self.iterations < self.j0 {
            return Err(Error::InvalidArgument(format!(
                "iterations ({}) must be at least j0 ({})",
                self.iterations, self.j0
            )));
        }
        if self.fit_starts == 0 {
            return Err(Error::InvalidArgument("fit_starts must be positive".into()));
        }
        self.evaluation().validate()
    }
}

/// One completed evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    /// 1-based evaluation index.
    pub iter: usize,
    pub x: Vec<f64>,
    pub f_hat: f64,
    pub se: f64,
    pub g_used: usize,
    pub stopped_early: bool,
    /// Incumbent after this evaluation.
    pub f_max: f64,
    pub cum_draws: usize,
    /// True when a fit failed and `x` was drawn at random instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizationTrace {
    pub records: Vec<EvaluationRecord>,
    /// `(iter, f_max)`, non-decreasing in `f_max`.
    pub incumbent_path: Vec<(usize, f64)>,
    pub total_draws: usize,
    best: Option<usize>,
}

impl OptimizationTrace {
    pub fn f_max(&self) -> Option<f64> {
        self.incumbent_path.last().map(|(_, f)| *f)
    }

    /// Record holding the incumbent.
    pub fn best(&self) -> Option<&EvaluationRecord> {
        self.best.map(|i| &self.records[i])
    }

    /// Folds `outcome` into the trace: `f_max := max(f_max, f̂)`. Early-stopped
    /// evaluations count like any other, so they only move the incumbent when their
    /// estimate beats it.
    pub fn incumbent_update(&mut self, outcome: &EvaluationOutcome, fallback: bool) -> f64 {
        let iter = self.records.len() + 1;
        let f_max = match self.f_max() {
            Some(f) if f >= outcome.f_hat => f,
            _ => {
                self.best = Some(self.records.len());
                outcome.f_hat
            }
        };
        self.total_draws += outcome.g_used;
        self.records.push(EvaluationRecord {
            iter,
            x: outcome.x.clone(),
            f_hat: outcome.f_hat,
            se: outcome.se,
            g_used: outcome.g_used,
            stopped_early: outcome.stopped_early,
            f_max,
            cum_draws: self.total_draws,
            fallback,
        });
        self.incumbent_path.push((iter, f_max));
        f_max
    }

    pub fn write_tsv<W: Write>(&self, out: &mut W, dim: usize) -> std::io::Result<()> {
        let mut header = vec!["iter".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        header.extend(["f_hat", "se", "g_used", "stopped_early", "f_max", "cum_draws", "fallback"].map(String::from));
        writeln!(out, "{}", header.join("\t"))?;
        for r in &self.records {
            let mut row = vec![r.iter.to_string()];
            row.extend(r.x.iter().map(|v| fmt_float(*v)));
            row.extend([
                fmt_float(r.f_hat),
                fmt_float(r.se),
                r.g_used.to_string(),
                r.stopped_early.to_string(),
                fmt_float(r.f_max),
                r.cum_draws.to_string(),
                r.fallback.to_string(),
            ]);
            writeln!(out, "{}", row.join("\t"))?;
        }
        Ok(())
    }

    /// Parses the output of [`OptimizationTrace::write_tsv`].
    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument("trace file is empty".into()))?
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let cols: Vec<&str> = header.split('\t').collect();
        let dim = cols.iter().filter(|c| c.starts_with('x')).count();
        if cols.len() != dim + 8 || cols[0] != "iter" {
            return Err(Error::InvalidArgument("trace header is malformed".into()));
        }
        let mut trace = Self::default();
        for (row, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != cols.len() {
                return Err(Error::InvalidArgument(format!("trace row {} has {} cells", row + 1, cells.len())));
            }
            let bad = |c: usize| Error::InvalidArgument(format!("trace row {}, column '{}' is malformed", row + 1, cols[c]));
            let num = |c: usize| cells[c].parse::<f64>().map_err(|_| bad(c));
            let int = |c: usize| cells[c].parse::<usize>().map_err(|_| bad(c));
            let flag = |c: usize| cells[c].parse::<bool>().map_err(|_| bad(c));
            let x = (1..=dim).map(num).collect::<Result<Vec<_>>>()?;
            let outcome = EvaluationOutcome {
                x,
                f_hat: num(dim + 1)?,
                se: num(dim + 2)?,
                g_used: int(dim + 3)?,
                stopped_early: flag(dim + 4)?,
                pi_at_stop: None,
            };
            trace.incumbent_update(&outcome, flag(dim + 7)?);
        }
        Ok(trace)
    }
}

/// Shortest round-trip formatting is not stable across writers, so floats are written
/// with 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub trace: OptimizationTrace,
}

/// Heteroscedastic surrogate for `f`: Matérn-5/2 on the unit-scaled box with noise
/// variances `se²` and the observation mean as prior mean.
pub fn fit_surrogate(
    inputs: &[Vec<f64>],
    f_hat: &[f64],
    se: &[f64],
    bounds: &Bounds,
    starts: usize,
    rng: &mut dyn RngCore,
) -> Result<GpModel> {
    let train = TrainingSet::new(inputs.to_vec(), f_hat.to_vec(), se.iter().map(|s| s * s).collect())?;
    let typical_se = crate::stats::mean(se);
    let spread = crate::stats::sample_sd(f_hat).max(typical_se).max(1e-6);
    let hyper = HyperBounds { sigma_f: (0.01 * spread, 100.0 * spread), ell: (0.05, 5.0), nugget: None };
    let options = FitOptions {
        prior_mean: train.observation_mean(),
        transform: Some(InputTransform::unit_box(bounds)),
        starts,
        ..FitOptions::with_prior_mean(0.0)
    };
    let fit = gp_fit_hyperparams(&train, KernelFamily::Matern52, &hyper, &options, rng)?;
    GpModel::new(train, fit.kernel, options.prior_mean, 0.0, options.transform)
}

fn surrogate_from_trace(trace: &OptimizationTrace, cfg: &BoopConfig, rng: &mut dyn RngCore) -> Result<GpModel> {
    let xs: Vec<Vec<f64>> = trace.records.iter().map(|r| r.x.clone()).collect();
    let fs: Vec<f64> = trace.records.iter().map(|r| r.f_hat).collect();
    let ses: Vec<f64> = trace.records.iter().map(|r| r.se).collect();
    fit_surrogate(&xs, &fs, &ses, &cfg.bounds, cfg.fit_starts, rng)
}

/// Runs one optimization. `factory` builds a fresh estimator at each proposed point.
pub fn optimize<E, F>(strategy: Strategy, mut factory: F, cfg: &BoopConfig, rng: &mut dyn RngCore) -> Result<OptimizationResult>
where
    E: PrecisionEstimator,
    F: FnMut(&[f64]) -> Result<E>,
{
    cfg.validate()?;
    let eval_cfg = cfg.evaluation();
    let mut trace = OptimizationTrace::default();
    let mut effort_records: Vec<EffortRecord> = Vec::new();

    for iter in 0..cfg.iterations {
        if iter < cfg.j0 {
            let x = cfg.bounds.sample(rng);
            let outcome = evaluate_full_budget(&mut factory(&x)?, &x, cfg.g_max, rng)?;
            trace.incumbent_update(&outcome, false);
            continue;
        }
        let f_max = trace.f_max().expect("initial evaluations precede the search");
        let surrogate = match surrogate_from_trace(&trace, cfg, rng) {
            Ok(gp) => gp,
            Err(_) => {
                let x = cfg.bounds.sample(rng);
                let outcome = evaluate_full_budget(&mut factory(&x)?, &x, cfg.g_max, rng)?;
                trace.incumbent_update(&outcome, true);
                continue;
            }
        };
        let incumbent = trace.best().map(|r| r.x.clone());
        let (x, fallback) = match strategy {
            Strategy::Boop => {
                let (effort, effort_failed) = match EffortModel::fit(&effort_records, cfg.g_min as f64, cfg.g_max as f64, rng) {
                    Ok(m) => (Some(m), false),
                    Err(Error::ColdStart { .. }) => (None, false),
                    Err(_) => (None, true),
                };
                let ctx = AcquisitionContext { f_max, surrogate: &surrogate, effort: effort.as_ref(), g_min: cfg.g_min as f64 };
                let acq = |x: &[f64]| boop_acquisition(x, &ctx).map_or(f64::NEG_INFINITY, |s| s.value);
                (optimize_acquisition(acq, &cfg.bounds, &cfg.acquisition, incumbent.as_deref(), rng)?, effort_failed)
            }
            Strategy::BoEi => {
                let ctx = AcquisitionContext { f_max, surrogate: &surrogate, effort: None, g_min: cfg.g_min as f64 };
                let acq = |x: &[f64]| ei_at(x, &ctx).unwrap_or(f64::NEG_INFINITY);
                (optimize_acquisition(acq, &cfg.bounds, &cfg.acquisition, incumbent.as_deref(), rng)?, false)
            }
        };
        let mut estimator = factory(&x)?;
        let outcome = match strategy {
            Strategy::Boop => {
                let outcome = evaluate_with_early_stopping(&mut estimator, &x, &surrogate, f_max, &eval_cfg, rng)?;
                let z = build_covariates(&x, &surrogate.predict(&x)?, f_max)?;
                effort_records.push(EffortRecord::new(&z, outcome.g_used));
                outcome
            }
            Strategy::BoEi => evaluate_full_budget(&mut estimator, &x, cfg.g_max, rng)?,
        };
        trace.incumbent_update(&outcome, fallback);
    }

    let best = trace.best().expect("at least j0 evaluations");
    Ok(OptimizationResult { best_x: best.x.clone(), best_f: best.f_hat, trace })
}

pub fn boop_optimize<E, F>(factory: F, cfg: &BoopConfig, rng: &mut dyn RngCore) -> Result<OptimizationResult>
where
    E: PrecisionEstimator,
    F: FnMut(&[f64]) -> Result<E>,
{
    optimize(Strategy::Boop, factory, cfg, rng)
}

pub fn bo_ei_optimize<E, F>(factory: F, cfg: &BoopConfig, rng: &mut dyn RngCore) -> Result<OptimizationResult>
where
    E: PrecisionEstimator,
    F: FnMut(&[f64]) -> Result<E>,
{
    optimize(Strategy::BoEi, factory, cfg, rng)
}

/// Grid points `lower, lower + step, …` up to `upper` (inclusive, with a small tolerance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.lower.is_finite() && self.upper >= self.lower) {
            return Err(Error::InvalidArgument(format!("grid axis {self:?} is empty or malformed")));
        }
        let count = ((self.upper - self.lower) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| self.lower + i as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRow {
    pub x: Vec<f64>,
    pub f_hat: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceTable {
    pub rows: Vec<SurfaceRow>,
    /// Row with the largest finite `f_hat`.
    pub argmax: Option<usize>,
}

impl SurfaceTable {
    pub fn write_tsv<W: Write>(&self, out: &mut W, names: &[&str]) -> std::io::Result<()> {
        writeln!(out, "{}\tf_hat\tse", names.join("\t"))?;
        for r in &self.rows {
            let xs: Vec<String> = r.x.iter().map(|v| fmt_float(*v)).collect();
            writeln!(out, "{}\t{}\t{}", xs.join("\t"), fmt_float(r.f_hat), fmt_float(r.se))?;
        }
        Ok(())
    }
}

/// Cartesian product of the axes, last axis varying fastest.
pub fn grid_points(axes: &[GridAxis]) -> Result<Vec<Vec<f64>>> {
    if axes.is_empty() {
        return Err(Error::InvalidArgument("grid needs at least one axis".into()));
    }
    let mut points = vec![Vec::new()];
    for axis in axes {
        let values = axis.points()?;
        points = points
            .into_iter()
            .flat_map(|p| values.iter().map(move |v| {
                let mut q = p.clone();
                q.push(*v);
                q
            }))
            .collect();
    }
    Ok(points)
}

/// Evaluates `objective` at every grid point. Failures become NaN rows.
pub fn grid_search<F>(mut objective: F, axes: &[GridAxis]) -> Result<SurfaceTable>
where
    F: FnMut(&[f64]) -> Result<(f64, f64)>,
{
    let mut rows: Vec<SurfaceRow> = Vec::new();
    let mut argmax: Option<usize> = None;
    for x in grid_points(axes)? {
        let (f_hat, se) = objective(&x).unwrap_or((f64::NAN, f64::NAN));
        if f_hat.is_finite() && argmax.is_none_or(|i: usize| f_hat > rows[i].f_hat) {
            argmax = Some(rows.len());
        }
        rows.push(SurfaceRow { x, f_hat, se });
    }
    Ok(SurfaceTable { rows, argmax })
}
