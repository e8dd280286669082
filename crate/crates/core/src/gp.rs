//! Gaussian process regression with a per-observation noise variance.
//!
//! Observations are `y_i = f(x_i) + e_i`, `e_i ~ N(0, v_i + nugget)` where `v_i` is
//! supplied with each point (the squared standard error of an MCMC estimate, say)
//! and `nugget` is an optional homoscedastic term. The prior mean is a constant.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::linalg::{self, Chol};
use crate::stats::LN_2PI;
use crate::{Bounds, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    SquaredExponential,
    /// Matérn with smoothness fixed at 5/2.
    Matern52,
}

/// Isotropic stationary kernel: family, function-scale `sigma_f` and length scale `ell`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub sigma_f: f64,
    pub ell: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma_f: f64, ell: f64) -> Result<Self> {
        if !(sigma_f > 0.0 && sigma_f.is_finite()) || !(ell > 0.0 && ell.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel needs sigma_f > 0 and ell > 0 (got {sigma_f}, {ell})"
            )));
        }
        Ok(Self { family, sigma_f, ell })
    }

    /// Covariance at Euclidean distance `r`.
    pub fn at_distance(&self, r: f64) -> f64 {
        let s2 = self.sigma_f * self.sigma_f;
        match self.family {
            KernelFamily::SquaredExponential => s2 * (-0.5 * r * r / (self.ell * self.ell)).exp(),
            KernelFamily::Matern52 => {
                let a = 5f64.sqrt() * r / self.ell;
                s2 * (1.0 + a + a * a / 3.0) * (-a).exp()
            }
        }
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.at_distance(distance(x, y))
    }
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// `k(x, x')` with dimension and finiteness checks.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], x_prime: &[f64]) -> Result<f64> {
    if x.len() != x_prime.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: x_prime.len(),
        });
    }
    if x.iter().chain(x_prime).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel input"));
    }
    Ok(spec.eval_unchecked(x, x_prime))
}

/// Gram matrix `K_ij = k(x_i, x_j)`.
pub fn gram_matrix(spec: &KernelSpec, inputs: &[Vec<f64>]) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = spec.eval_unchecked(&inputs[i], &inputs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Inputs, observations and per-point noise variances.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    inputs: Vec<Vec<f64>>,
    observations: Vec<f64>,
    noise_variances: Vec<f64>,
}

impl TrainingSet {
    pub fn new(inputs: Vec<Vec<f64>>, observations: Vec<f64>, noise_variances: Vec<f64>) -> Result<Self> {
        let n = inputs.len();
        if observations.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: observations.len() });
        }
        if noise_variances.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: noise_variances.len() });
        }
        if let Some(first) = inputs.first() {
            let d = first.len();
            if let Some(bad) = inputs.iter().find(|x| x.len() != d) {
                return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
            }
        }
        if inputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training inputs"));
        }
        if observations.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training observations"));
        }
        if noise_variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("noise variances must be finite and >= 0".into()));
        }
        Ok(Self { inputs, observations, noise_variances })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Copy with one more observation appended.
    pub fn with_point(&self, x: &[f64], y: f64, noise_variance: f64) -> Result<Self> {
        let mut inputs = self.inputs.clone();
        let mut obs = self.observations.clone();
        let mut noise = self.noise_variances.clone();
        inputs.push(x.to_vec());
        obs.push(y);
        noise.push(noise_variance);
        Self::new(inputs, obs, noise)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn noise_variances(&self) -> &[f64] {
        &self.noise_variances
    }

    /// Mean of the observations, or 0 when empty.
    pub fn observation_mean(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            crate::stats::mean(&self.observations)
        }
    }
}

/// Posterior mean and standard deviation of the latent function at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpPosteriorPoint {
    pub mean: f64,
    pub sd: f64,
}

/// Affine input map `u = (x - shift) / scale`, applied before kernel evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTransform {
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl InputTransform {
    /// Maps the box onto the unit cube. Degenerate dimensions map to 0.
    pub fn unit_box(bounds: &Bounds) -> Self {
        let scale = bounds
            .lower
            .iter()
            .zip(&bounds.upper)
            .map(|(lo, hi)| if hi > lo { hi - lo } else { 1.0 })
            .collect();
        Self { shift: bounds.lower.clone(), scale }
    }

    /// Z-scores each column of `inputs`; columns with zero spread keep unit scale.
    pub fn standardize(inputs: &[Vec<f64>]) -> Self {
        let d = inputs.first().map_or(0, Vec::len);
        let mut shift = vec![0.0; d];
        let mut scale = vec![1.0; d];
        for j in 0..d {
            let col: Vec<f64> = inputs.iter().map(|x| x[j]).collect();
            shift[j] = crate::stats::mean(&col);
            let sd = crate::stats::sample_sd(&col);
            if sd > 1e-12 {
                scale[j] = sd;
            }
        }
        Self { shift, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, c))| (v - s) / c)
            .collect()
    }
}

/// A conditioned GP. Immutable: adding data builds a new model.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelSpec,
    prior_mean: f64,
    nugget: f64,
    transform: Option<InputTransform>,
    train: TrainingSet,
    scaled_inputs: Vec<Vec<f64>>,
    chol: Option<Chol>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    pub fn new(
        train: TrainingSet,
        kernel: KernelSpec,
        prior_mean: f64,
        nugget: f64,
        transform: Option<InputTransform>,
    ) -> Result<Self> {
        if !prior_mean.is_finite() {
            return Err(Error::NonFinite("prior mean"));
        }
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return Err(Error::InvalidArgument(format!("nugget must be >= 0, got {nugget}")));
        }
        let scaled_inputs: Vec<Vec<f64>> = match &transform {
            Some(t) => train.inputs.iter().map(|x| t.apply(x)).collect(),
            None => train.inputs.clone(),
        };
        let n = train.len();
        let (chol, alpha, jitter) = if n == 0 {
            (None, DVector::zeros(0), 0.0)
        } else {
            let mut k = gram_matrix(&kernel, &scaled_inputs);
            for i in 0..n {
                k[(i, i)] += train.noise_variances[i] + nugget;
            }
            let (chol, jitter) = linalg::cholesky_jittered(&k)?;
            let resid = DVector::from_iterator(n, train.observations.iter().map(|y| y - prior_mean));
            let alpha = chol.solve(&resid);
            (Some(chol), alpha, jitter)
        };
        Ok(Self { kernel, prior_mean, nugget, transform, train, scaled_inputs, chol, alpha, jitter })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn training_set(&self) -> &TrainingSet {
        &self.train
    }

    pub fn transform(&self) -> Option<&InputTransform> {
        self.transform.as_ref()
    }

    /// Jitter added to the diagonal to obtain the factorization (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn scale(&self, x: &[f64]) -> Vec<f64> {
        match &self.transform {
            Some(t) => t.apply(x),
            None => x.to_vec(),
        }
    }

    /// Posterior of the latent `f(x)`.
    pub fn predict(&self, x: &[f64]) -> Result<GpPosteriorPoint> {
        if let Some(first) = self.train.inputs.first() {
            if first.len() != x.len() {
                return Err(Error::DimensionMismatch { expected: first.len(), found: x.len() });
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction input"));
        }
        let prior_var = self.kernel.sigma_f * self.kernel.sigma_f;
        let Some(chol) = &self.chol else {
            return Ok(GpPosteriorPoint { mean: self.prior_mean, sd: self.kernel.sigma_f });
        };
        let xs = self.scale(x);
        let n = self.train.len();
        let kstar = DMatrix::from_iterator(
            n,
            1,
            self.scaled_inputs.iter().map(|xi| self.kernel.eval_unchecked(xi, &xs)),
        );
        let mean = self.prior_mean + kstar.column(0).dot(&self.alpha);
        let v = linalg::solve_lower(chol, &kstar);
        let var = (prior_var - v.norm_squared()).clamp(0.0, prior_var);
        Ok(GpPosteriorPoint { mean, sd: var.sqrt() })
    }

    /// Log density of the observations under the GP-plus-noise Gaussian.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let Some(chol) = &self.chol else { return 0.0 };
        let n = self.train.len() as f64;
        let resid = DVector::from_iterator(
            self.train.len(),
            self.train.observations.iter().map(|y| y - self.prior_mean),
        );
        -0.5 * (resid.dot(&self.alpha) + linalg::log_det(chol) + n * LN_2PI)
    }

    /// New model conditioned on one more observation; `self` is untouched.
    pub fn with_observation(&self, x: &[f64], y: f64, noise_variance: f64) -> Result<Self> {
        let train = self.train.with_point(x, y, noise_variance)?;
        Self::new(train, self.kernel, self.prior_mean, self.nugget, self.transform.clone())
    }
}

/// Posterior at `x_star` with no input transform and no nugget.
pub fn gp_posterior(
    train: &TrainingSet,
    spec: &KernelSpec,
    prior_mean: f64,
    x_star: &[f64],
) -> Result<GpPosteriorPoint> {
    GpModel::new(train.clone(), *spec, prior_mean, 0.0, None)?.predict(x_star)
}

pub fn gp_log_marginal_likelihood(train: &TrainingSet, spec: &KernelSpec, prior_mean: f64) -> Result<f64> {
    Ok(GpModel::new(train.clone(), *spec, prior_mean, 0.0, None)?.log_marginal_likelihood())
}

/// Search box for kernel hyperparameters (natural scale, searched in log space).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperBounds {
    pub sigma_f: (f64, f64),
    pub ell: (f64, f64),
    /// When present, a homoscedastic nugget variance is fitted jointly.
    pub nugget: Option<(f64, f64)>,
}

impl HyperBounds {
    fn validate(&self) -> Result<()> {
        let mut all = vec![self.sigma_f, self.ell];
        all.extend(self.nugget);
        for (lo, hi) in all {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidArgument(format!("hyperparameter bounds must satisfy 0 < lo <= hi (got [{lo}, {hi}])")));
            }
        }
        Ok(())
    }

    fn log_box(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(self.sigma_f.0.ln(), self.sigma_f.1.ln()), (self.ell.0.ln(), self.ell.1.ln())];
        if let Some((lo, hi)) = self.nugget {
            b.push((lo.ln(), hi.ln()));
        }
        b
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub prior_mean: f64,
    pub transform: Option<InputTransform>,
    pub starts: usize,
    pub max_evals_per_start: usize,
}

impl FitOptions {
    pub fn with_prior_mean(prior_mean: f64) -> Self {
        Self { prior_mean, transform: None, starts: 8, max_evals_per_start: 300 }
    }
}

#[derive(Debug, Clone)]
pub struct FittedHyperparams {
    pub kernel: KernelSpec,
    pub nugget: f64,
    pub log_marginal_likelihood: f64,
    /// Objective at each multistart initial point, in start order.
    pub start_objectives: Vec<f64>,
    /// False when no local search met its tolerance; the best evaluated point is still returned.
    pub converged: bool,
}

/// Maximises the GP log marginal likelihood over the hyperparameter box.
///
/// Starts are a log-space Latin hypercube over the box; each is refined by a
/// box-projected Nelder-Mead. The best point over every evaluation wins, ties broken
/// by the lowest start index.
pub fn gp_fit_hyperparams<R: Rng + ?Sized>(
    train: &TrainingSet,
    family: KernelFamily,
    bounds: &HyperBounds,
    options: &FitOptions,
    rng: &mut R,
) -> Result<FittedHyperparams> {
    if train.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "hyperparameter fitting needs at least 2 points, have {}",
            train.len()
        )));
    }
    bounds.validate()?;
    let log_box = bounds.log_box();
    let dim = log_box.len();
    let starts = options.starts.max(1);

    // log-space Latin hypercube
    let mut columns: Vec<Vec<usize>> = (0..dim)
        .map(|_| {
            let mut p: Vec<usize> = (0..starts).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    let start_points: Vec<Vec<f64>> = (0..starts)
        .map(|i| {
            (0..dim)
                .map(|d| {
                    let (lo, hi) = log_box[d];
                    let u = (columns[d][i] as f64 + rng.random::<f64>()) / starts as f64;
                    lo + u * (hi - lo)
                })
                .collect()
        })
        .collect();
    columns.clear();

    let objective = |theta: &[f64]| -> f64 {
        let sigma_f = theta[0].exp();
        let ell = theta[1].exp();
        let nugget = if dim > 2 { theta[2].exp() } else { 0.0 };
        let kernel = KernelSpec { family, sigma_f, ell };
        match GpModel::new(train.clone(), kernel, options.prior_mean, nugget, options.transform.clone()) {
            Ok(m) => {
                let v = m.log_marginal_likelihood();
                if v.is_finite() {
                    v
                } else {
                    f64::NEG_INFINITY
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_objectives = Vec::with_capacity(starts);
    let mut any_converged = false;
    for x0 in &start_points {
        let f0 = objective(x0);
        start_objectives.push(f0);
        let result = nelder_mead_max(&objective, x0, f0, &log_box, options.max_evals_per_start, 1e-9);
        any_converged |= result.converged;
        let (x, fx) = if result.value >= f0 { (result.point, result.value) } else { (x0.clone(), f0) };
        if best.as_ref().is_none_or(|(_, bf)| fx > *bf) {
            best = Some((x, fx));
        }
    }
    let (theta, value) = best.expect("at least one start");
    if !value.is_finite() {
        return Err(Error::InvalidArgument(
            "GP marginal likelihood is non-finite at every candidate hyperparameter".into(),
        ));
    }
    Ok(FittedHyperparams {
        kernel: KernelSpec { family, sigma_f: theta[0].exp(), ell: theta[1].exp() },
        nugget: if dim > 2 { theta[2].exp() } else { 0.0 },
        log_marginal_likelihood: value,
        start_objectives,
        converged: any_converged,
    })
}

struct LocalResult {
    point: Vec<f64>,
    value: f64,
    converged: bool,
}

/// Nelder-Mead maximisation with every vertex projected into the box.
/// Dimensions with a collapsed interval stay fixed.
fn nelder_mead_max<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    f0: f64,
    bounds: &[(f64, f64)],
    max_evals: usize,
    tol: f64,
) -> LocalResult {
    let free: Vec<usize> = (0..x0.len()).filter(|&d| bounds[d].1 > bounds[d].0).collect();
    if free.is_empty() {
        return LocalResult { point: x0.to_vec(), value: f0, converged: true };
    }
    let k = free.len();
    let project = |mut x: Vec<f64>| {
        for (d, v) in x.iter_mut().enumerate() {
            *v = v.clamp(bounds[d].0, bounds[d].1);
        }
        x
    };
    // vertices stored with the negated objective so the search minimises
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), -f0)];
    for &d in &free {
        let width = bounds[d].1 - bounds[d].0;
        let mut x = x0.to_vec();
        let step = 0.1 * width;
        x[d] = if x[d] + step <= bounds[d].1 { x[d] + step } else { x[d] - step };
        let x = project(x);
        let v = -f(&x);
        simplex.push((x, v));
    }
    let mut evals = k;
    let mut converged = false;
    let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    while evals < max_evals {
        simplex.sort_by(|a, b| key(a.1).partial_cmp(&key(b.1)).unwrap());
        let best = key(simplex[0].1);
        let worst = key(simplex[k].1);
        if best.is_finite() && worst.is_finite() && (worst - best).abs() <= tol * (1.0 + best.abs()) {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..x0.len())
            .map(|d| simplex[..k].iter().map(|(x, _)| x[d]).sum::<f64>() / k as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            project(
                centroid
                    .iter()
                    .zip(&simplex[k].0)
                    .map(|(c, w)| c + t * (w - c))
                    .collect(),
            )
        };
        let xr = along(-1.0);
        let fr = key(-f(&xr));
        evals += 1;
        if fr < key(simplex[0].1) {
            let xe = along(-2.0);
            let fe = key(-f(&xe));
            evals += 1;
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < key(simplex[k - 1].1) {
            simplex[k] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst {
                let xc = along(-0.5);
                (xc.clone(), key(-f(&xc)))
            } else {
                let xc = along(0.5);
                (xc.clone(), key(-f(&xc)))
            };
            evals += 1;
            if fc < worst.min(fr) {
                simplex[k] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = x_best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let x = project(x);
                    let v = key(-f(&x));
                    *vertex = (x, v);
                }
                evals += k;
            }
        }
    }
    simplex.sort_by(|a, b| key(a.1).partial_cmp(&key(b.1)).unwrap());
    let (point, v) = simplex.swap_remove(0);
    LocalResult { point, value: -v, converged }
}
