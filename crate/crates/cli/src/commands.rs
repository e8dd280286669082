//! The five commands. Each writes its tables, the resolved configuration and a manifest
//! into the output directory; nothing written depends on wall-clock time or paths other
//! than those in the configuration, so reruns are byte-identical.

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use boop_core::bench::{compare_strategies, StrategySpec, SyntheticObjective};
use boop_core::bvar::{
    marginal_likelihood_estimator, BvarData, ConjugateBvar, EstimatorSettings, ShrinkageParams, SigmaPrior, SteadyStatePrior,
};
use boop_core::chib::{chib_logml, ChibOptions, LagPolicy, ToyGaussianModel};
use boop_core::driver::{fit_surrogate, fmt_float, grid_search, optimize, GridAxis, OptimizationTrace, Strategy};
use boop_core::evaluator::{evaluate_full_budget, PrecisionEstimator};
use boop_core::{seeded_rng, Bounds};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{AxisSpec, ObjectiveKind, Overrides, RunConfig};
use crate::data::{ingest_csv, prepare};
use crate::error::CliError;

pub const AGGREGATION_NOTE: &str = "monthly series are aggregated to quarters by the within-quarter mean";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Optimize,
    Grid,
    Benchmark,
    ChibValidate,
    SurfaceExport,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Optimize => "optimize",
            Command::Grid => "grid",
            Command::Benchmark => "benchmark",
            Command::ChibValidate => "chib-validate",
            Command::SurfaceExport => "surface-export",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub out: PathBuf,
}

/// A file checksummed as part of the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactRecord {
    pub name: String,
    pub sha256: String,
}

/// Everything needed to repeat a run: rerunning with `--config <out>/config.toml` from
/// the same working directory reproduces every artifact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config_file: &'static str,
    pub config_sha256: String,
    pub inputs: Vec<InputRecord>,
    pub aggregation: &'static str,
    pub warnings: Vec<String>,
    pub artifacts: Vec<ArtifactRecord>,
    pub status: String,
}

struct Outcome {
    artifacts: Vec<(String, String)>,
    inputs: Vec<InputRecord>,
    warnings: Vec<String>,
    /// A check that failed after its report was produced.
    failure: Option<CliError>,
}

impl Outcome {
    fn new() -> Self {
        Self { artifacts: Vec::new(), inputs: Vec::new(), warnings: Vec::new(), failure: None }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Resolves the configuration, runs the command and writes its outputs.
pub fn run(inv: &Invocation) -> Result<Manifest, CliError> {
    let mut cfg = match &inv.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut overrides = inv.overrides.clone();
    if inv.command == Command::SurfaceExport {
        // the input of surface-export is a trace, not the model data
        if let Some(trace) = overrides.data.take() {
            cfg.surface.trace = Some(trace);
        }
    }
    cfg.apply(&overrides);
    cfg.validate()?;

    let mut outcome = match inv.command {
        Command::Optimize => run_optimize(&cfg)?,
        Command::Grid => run_grid(&cfg)?,
        Command::Benchmark => run_benchmark(&cfg)?,
        Command::ChibValidate => run_chib_validate(&cfg)?,
        Command::SurfaceExport => run_surface_export(&cfg)?,
    };

    std::fs::create_dir_all(&inv.out)?;
    let config_text = cfg.to_toml();
    std::fs::write(inv.out.join("config.toml"), &config_text)?;
    let mut artifacts = Vec::with_capacity(outcome.artifacts.len());
    for (name, body) in &outcome.artifacts {
        std::fs::write(inv.out.join(name), body)?;
        artifacts.push(ArtifactRecord { name: name.clone(), sha256: sha256_hex(body.as_bytes()) });
    }
    let failure = outcome.failure.take();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: inv.command.name(),
        seed: cfg.seed,
        config_file: "config.toml",
        config_sha256: sha256_hex(config_text.as_bytes()),
        inputs: outcome.inputs,
        aggregation: AGGREGATION_NOTE,
        warnings: outcome.warnings,
        artifacts,
        status: failure.as_ref().map_or_else(|| "ok".to_string(), |e| e.to_string()),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(inv.out.join("manifest.json"), json)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

/// The function being maximized, with its search box and coordinate names.
struct BvarObjective {
    data: BvarData,
    prior: SteadyStatePrior,
    settings: EstimatorSettings,
    bounds: Bounds,
}

enum Objective {
    Bvar(Box<BvarObjective>),
    Bench(SyntheticObjective),
}

impl Objective {
    fn load(cfg: &RunConfig, outcome: &mut Outcome) -> Result<Self, CliError> {
        match cfg.objective {
            ObjectiveKind::Bench => Ok(Objective::Bench(SyntheticObjective::standard())),
            ObjectiveKind::Bvar => {
                let path = cfg.data.as_ref().ok_or_else(|| CliError::Config("the bvar objective needs a data file".into()))?;
                let bytes = read_input(path)?;
                outcome.inputs.push(InputRecord { role: "data".into(), path: path.display().to_string(), sha256: sha256_hex(&bytes) });
                let m = &cfg.model;
                let schema: Vec<_> = m.columns.iter().map(|c| c.spec()).collect();
                let prepared = prepare(&ingest_csv(path, &schema)?, &schema)?;
                outcome.warnings.extend(prepared.warnings);
                let data = BvarData::with_intercept(prepared.y, m.lags).map_err(|e| CliError::Data(e.to_string()))?;
                let n = schema.len();
                let prior = SteadyStatePrior {
                    psi_mean: m.columns.iter().map(|c| c.psi_mean).collect(),
                    psi_sd: m.columns.iter().map(|c| c.psi_sd).collect(),
                    pi_mean: m.pi_mean.clone().unwrap_or_else(|| vec![0.0; n * n * m.lags]),
                    sigma: SigmaPrior::Jeffreys,
                };
                let settings = EstimatorSettings {
                    burn: cfg.optimizer.burn,
                    lag: m.nw_lag.map_or(LagPolicy::Aic { q_max: m.q_max }, LagPolicy::Fixed),
                    scaling: m.own_lag_scaling.into(),
                    series_sd: None,
                };
                // fail on a malformed prior before any sampling
                marginal_likelihood_estimator(&data, &prior, &ShrinkageParams::standard(), &settings)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                Ok(Objective::Bvar(Box::new(BvarObjective { data, prior, settings, bounds: cfg.bounds.bounds()? })))
            }
        }
    }

    fn bounds(&self) -> &Bounds {
        match self {
            Objective::Bvar(b) => &b.bounds,
            Objective::Bench(b) => &b.bounds,
        }
    }

    fn names(&self) -> Vec<&'static str> {
        match self {
            Objective::Bvar(_) => vec!["lambda1", "lambda2", "lambda3"],
            Objective::Bench(_) => vec!["x0", "x1"],
        }
    }

    fn estimator(&self, x: &[f64]) -> boop_core::Result<Box<dyn PrecisionEstimator>> {
        match self {
            Objective::Bvar(b) => {
                Ok(Box::new(marginal_likelihood_estimator(&b.data, &b.prior, &ShrinkageParams::from_slice(x)?, &b.settings)?))
            }
            Objective::Bench(b) => Ok(Box::new(b.estimator(x))),
        }
    }

    /// Point every optimized result is compared with.
    fn reference_point(&self) -> Vec<f64> {
        match self {
            Objective::Bvar(_) => {
                let s = ShrinkageParams::standard();
                vec![s.lambda1, s.lambda2, s.lambda3]
            }
            Objective::Bench(_) => SyntheticObjective::reference_point(),
        }
    }

    fn default_grid(&self) -> Vec<AxisSpec> {
        match self {
            Objective::Bvar(_) => {
                vec![AxisSpec::new(0.05, 5.0, 0.05), AxisSpec::new(0.05, 1.0, 0.05), AxisSpec::new(0.1, 5.0, 0.1)]
            }
            Objective::Bench(_) => vec![AxisSpec::new(0.0, 1.0, 0.05); 2],
        }
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn row(cells: impl IntoIterator<Item = String>) -> String {
    cells.into_iter().collect::<Vec<_>>().join("\t") + "\n"
}

fn floats(xs: &[f64]) -> impl Iterator<Item = String> + '_ {
    xs.iter().map(|v| fmt_float(*v))
}

fn run_optimize(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::new();
    let objective = Objective::load(cfg, &mut outcome)?;
    let strategy: Strategy = cfg.optimizer.strategy.into();
    let boop = cfg.optimizer.boop_config(objective.bounds().clone());
    let result = optimize(strategy, |x: &[f64]| objective.estimator(x), &boop, &mut seeded_rng(cfg.seed, 0))?;

    let names = objective.names();
    let mut trace = Vec::new();
    result.trace.write_tsv(&mut trace, names.len())?;
    outcome.artifacts.push(("trace.tsv".into(), String::from_utf8(trace).expect("trace is UTF-8")));

    // the incumbent's own estimate is biased upward by selection; both comparison rows
    // are fresh full-budget runs
    let reference = objective.reference_point();
    let optimized = evaluate_full_budget(&mut objective.estimator(&result.best_x)?, &result.best_x, boop.g_max, &mut seeded_rng(cfg.seed, 1))?;
    let standard = evaluate_full_budget(&mut objective.estimator(&reference)?, &reference, boop.g_max, &mut seeded_rng(cfg.seed, 2))?;
    let best = result.trace.best().expect("optimization records at least j0 evaluations");
    let mut summary = row(["label".to_string()].into_iter().chain(names.iter().map(|s| s.to_string())).chain(
        ["f_hat", "se", "g_used"].map(String::from),
    ));
    for (label, x, f, se, g) in [
        ("incumbent", &best.x, best.f_hat, best.se, best.g_used),
        ("optimized", &optimized.x, optimized.f_hat, optimized.se, optimized.g_used),
        ("standard", &standard.x, standard.f_hat, standard.se, standard.g_used),
    ] {
        summary += &row(std::iter::once(label.to_string()).chain(floats(x)).chain([fmt_float(f), fmt_float(se), g.to_string()]));
    }
    outcome.artifacts.push(("summary.tsv".into(), summary));
    Ok(outcome)
}

fn run_grid(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::new();
    let objective = Objective::load(cfg, &mut outcome)?;
    let specs = cfg.grid.axes.clone().unwrap_or_else(|| objective.default_grid());
    let names = objective.names();
    if specs.len() != names.len() {
        return Err(CliError::Config(format!("grid needs {} axes, has {}", names.len(), specs.len())));
    }
    let axes: Vec<GridAxis> = specs.iter().map(AxisSpec::axis).collect();
    let draws = cfg.grid.draws.unwrap_or(cfg.optimizer.g_max);
    let mut index = 0u64;
    let table = grid_search(
        |x| {
            // one stream per point, so any point can be recomputed on its own
            index += 1;
            let out = evaluate_full_budget(&mut objective.estimator(x)?, x, draws, &mut seeded_rng(cfg.seed, index))?;
            Ok((out.f_hat, out.se))
        },
        &axes,
    )?;
    let mut surface = Vec::new();
    table.write_tsv(&mut surface, &names)?;
    outcome.artifacts.push(("surface.tsv".into(), String::from_utf8(surface).expect("surface is UTF-8")));

    let failed = table.rows.iter().filter(|r| !r.f_hat.is_finite()).count();
    if failed > 0 {
        outcome.warnings.push(format!("{failed} grid point(s) failed and are reported as NaN"));
    }
    let mut summary = row(["label".to_string()].into_iter().chain(names.iter().map(|s| s.to_string())).chain(
        ["f_hat", "se"].map(String::from),
    ));
    if let Some(i) = table.argmax {
        let r = &table.rows[i];
        summary += &row(std::iter::once("argmax".to_string()).chain(floats(&r.x)).chain([fmt_float(r.f_hat), fmt_float(r.se)]));
    }
    outcome.artifacts.push(("summary.tsv".into(), summary));
    Ok(outcome)
}

fn run_benchmark(cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.objective != ObjectiveKind::Bench {
        return Err(CliError::Config("benchmark runs on the synthetic objective only".into()));
    }
    let objective = SyntheticObjective::standard();
    let section = crate::config::OptimizerSection { iterations: cfg.benchmark.iterations, ..cfg.optimizer.clone() };
    let base = section.boop_config(objective.bounds.clone());
    let strategies: Vec<StrategySpec> = [Strategy::Boop, Strategy::BoEi]
        .into_iter()
        .map(|s| StrategySpec { name: s.name().to_string(), strategy: s, config: base.clone() })
        .collect();
    // listed seeds are offsets from the run seed
    let seeds: Vec<u64> = cfg.benchmark.seeds.iter().map(|s| cfg.seed.wrapping_add(*s)).collect();
    let report = compare_strategies(&objective, &strategies, &seeds, &SyntheticObjective::reference_point(), cfg.benchmark.gap_fraction)?;

    let mut curves = row(["strategy", "seed", "iter", "cum_draws", "f_max", "true_at_incumbent"].map(String::from));
    for c in &report.curves {
        for p in &c.points {
            curves += &row([
                c.name.clone(),
                c.seed.to_string(),
                p.iter.to_string(),
                p.cum_draws.to_string(),
                fmt_float(p.f_max),
                fmt_float(p.true_at_incumbent),
            ]);
        }
    }
    let mut summary = row(
        [
            "strategy",
            "f_start",
            "f_opt",
            "target",
            "median_draws_to_target",
            "reached",
            "runs",
            "median_final_true",
            "median_total_draws",
        ]
        .map(String::from),
    );
    for s in &report.summaries {
        summary += &row([
            s.name.clone(),
            fmt_float(report.f_start),
            fmt_float(report.f_opt),
            fmt_float(report.target),
            fmt_float(s.median_draws_to_target),
            s.reached.to_string(),
            seeds.len().to_string(),
            fmt_float(s.median_final_true),
            fmt_float(s.median_total_draws),
        ]);
    }
    let mut outcome = Outcome::new();
    outcome.artifacts.push(("benchmark_curves.tsv".into(), curves));
    outcome.artifacts.push(("benchmark_summary.tsv".into(), summary));
    Ok(outcome)
}

fn run_chib_validate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let c = &cfg.chib_validate;
    let mut cases = row(["case", "replicate", "exact", "estimate", "se", "z"].map(String::from));
    let mut push = |case: &str, rep: u64, exact: f64, est: f64, se: f64| {
        cases += &row([case.to_string(), rep.to_string(), fmt_float(exact), fmt_float(est), fmt_float(se), fmt_float((est - exact) / se)]);
    };

    let toy = ToyGaussianModel::standard();
    let toy_exact = toy.analytic_log_ml();
    let toy_opts = ChibOptions { g1: c.toy_draws, g2: c.toy_draws, burn: c.toy_burn, lag: LagPolicy::default() };
    let mut toy_est = Vec::with_capacity(c.toy_replicates);
    let mut toy_se = Vec::with_capacity(c.toy_replicates);
    for r in 0..c.toy_replicates as u64 {
        let (est, _) = chib_logml(&toy, &toy_opts, &mut seeded_rng(cfg.seed, r))?;
        push("toy", r, toy_exact, est.log_ml, est.se);
        toy_est.push(est.log_ml);
        toy_se.push(est.se);
    }

    let opts = ChibOptions { g1: c.draws, g2: c.draws, burn: c.burn, lag: LagPolicy::default() };
    let mut conj_hits = 0usize;
    for &s in &c.seeds {
        let model = ConjugateBvar::reference(c.t, s)?;
        let exact = model.log_ml_oracle()?;
        let (est, _) = chib_logml(&model, &opts, &mut seeded_rng(cfg.seed, 1_000_000 + s))?;
        push("conjugate", s, exact, est.log_ml, est.se);
        conj_hits += usize::from((est.log_ml - exact).abs() <= 3.0 * est.se);
    }

    let k = toy_est.len() as f64;
    let toy_mean = toy_est.iter().sum::<f64>() / k;
    // standard error of the replicate mean from the per-replicate standard errors
    let pooled = (toy_se.iter().map(|s| s * s).sum::<f64>() / k / k).sqrt();
    let toy_z = (toy_mean - toy_exact) / pooled;
    let toy_within = toy_est.iter().zip(&toy_se).filter(|(e, s)| (*e - toy_exact).abs() <= 3.0 * *s).count();
    let conj_rate = if c.seeds.is_empty() { 1.0 } else { conj_hits as f64 / c.seeds.len() as f64 };

    let checks = [
        ("toy_mean_z", toy_z.abs(), 2.0, toy_z.abs() <= 2.0),
        ("toy_within_3se_share", toy_within as f64 / k, c.min_pass_rate, toy_within as f64 / k >= c.min_pass_rate),
        ("conjugate_within_3se_share", conj_rate, c.min_pass_rate, conj_rate >= c.min_pass_rate),
    ];
    let mut summary = row(["check", "value", "threshold", "pass"].map(String::from));
    for (name, value, threshold, pass) in checks {
        summary += &row([name.to_string(), fmt_float(value), fmt_float(threshold), pass.to_string()]);
    }
    let mut outcome = Outcome::new();
    outcome.artifacts.push(("chib_cases.tsv".into(), cases));
    outcome.artifacts.push(("chib_summary.tsv".into(), summary));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.3).map(|c| c.0).collect();
    if !failed.is_empty() {
        outcome.failure = Some(CliError::Numerical(format!("estimator checks failed: {}", failed.join(", "))));
    }
    Ok(outcome)
}

fn run_surface_export(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::new();
    let path = cfg.surface.trace.as_ref().ok_or_else(|| CliError::Config("surface-export needs a trace file".into()))?;
    let bytes = read_input(path)?;
    outcome.inputs.push(InputRecord { role: "trace".into(), path: path.display().to_string(), sha256: sha256_hex(&bytes) });
    let trace = OptimizationTrace::read_tsv(BufReader::new(bytes.as_slice())).map_err(|e| CliError::Data(e.to_string()))?;

    let (bounds, names, default_axis) = match cfg.objective {
        ObjectiveKind::Bvar => (cfg.bounds.bounds()?, ["lambda1", "lambda2", "lambda3"].as_slice(), [
            AxisSpec::new(0.05, 5.0, 0.05),
            AxisSpec::new(0.05, 1.0, 0.05),
        ]),
        ObjectiveKind::Bench => (SyntheticObjective::standard().bounds, ["x0", "x1"].as_slice(), [AxisSpec::new(0.0, 1.0, 0.02); 2]),
    };
    let dim = bounds.dim();
    if trace.records.len() < 2 || trace.records.iter().any(|r| r.x.len() != dim) {
        return Err(CliError::Data(format!("trace must hold at least 2 evaluations of dimension {dim}")));
    }
    let xs: Vec<Vec<f64>> = trace.records.iter().map(|r| r.x.clone()).collect();
    let fs: Vec<f64> = trace.records.iter().map(|r| r.f_hat).collect();
    let ses: Vec<f64> = trace.records.iter().map(|r| r.se).collect();
    let gp = fit_surrogate(&xs, &fs, &ses, &bounds, cfg.optimizer.fit_starts, &mut seeded_rng(cfg.seed, 0))?;

    let a1 = cfg.surface.lambda1.unwrap_or(default_axis[0]).axis().points()?;
    let a2 = cfg.surface.lambda2.unwrap_or(default_axis[1]).axis().points()?;
    let mut table = row(names.iter().map(|s| s.to_string()).chain(["mean", "sd"].map(String::from)));
    for u in &a1 {
        for v in &a2 {
            let mut x = vec![*u, *v];
            if dim == 3 {
                x.push(cfg.surface.lambda3);
            }
            let post = gp.predict(&x)?;
            table += &row(floats(&x).chain([fmt_float(post.mean), fmt_float(post.sd)]));
        }
    }
    outcome.artifacts.push(("surface_export.tsv".into(), table));
    Ok(outcome)
}
