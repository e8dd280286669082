//! Steady-state Bayesian VAR and a conjugate reference VAR.
//!
//! The steady-state model is `Π(L)(y_t - Ψ x_t) = ε_t`, `ε_t ~ N(0, Σ)`, with
//! independent priors `vec(Π) ~ N(θ_Π, Ω_Π)`, `vec(Ψ) ~ N(θ_Ψ, Ω_Ψ)` and either the
//! improper `p(Σ) ∝ |Σ|^{-(n+1)/2}` or a proper inverse-Wishart. `Ω_Π` is diagonal
//! with Minnesota-style shrinkage controlled by `(λ1, λ2, λ3)`.
//!
//! Coefficient vectors for `Π = [Π_1 … Π_p]` (`n x np`) are stored row by row, so
//! entry `r·np + (l-1)·n + j` is the coefficient of variable `j` at lag `l` in
//! equation `r`.

mod conjugate;
mod geweke;

pub use conjugate::{conjugate_logml_oracle, ConjugateBvar, ConjugateState, MniwPrior};
pub use geweke::{geweke_test, GewekeConfig, GewekeReport};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::chib::{Block, IncrementalChib, LagPolicy, ThreeBlockModel};
use crate::linalg::{self, Chol};
use crate::stats::{normal_log_density, sample_sd, LN_2PI};
use crate::{Error, Result};

/// Observations with deterministic regressors and a lag order.
#[derive(Debug, Clone, PartialEq)]
pub struct BvarData {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    p: usize,
}

impl BvarData {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>, p: usize) -> Result<Self> {
        let (t, n) = y.shape();
        let m = x.ncols();
        if x.nrows() != t {
            return Err(Error::DimensionMismatch { expected: t, found: x.nrows() });
        }
        if p == 0 || n == 0 || m == 0 {
            return Err(Error::InvalidArgument("need n >= 1, m >= 1 and p >= 1".into()));
        }
        if t <= n * p + m {
            return Err(Error::InvalidArgument(format!("{t} observations are too few for n = {n}, p = {p}, m = {m}")));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("BVAR data"));
        }
        Ok(Self { y, x, p })
    }

    /// Data with a constant as the only deterministic regressor.
    pub fn with_intercept(y: DMatrix<f64>, p: usize) -> Result<Self> {
        let t = y.nrows();
        Self::new(y, DMatrix::from_element(t, 1, 1.0), p)
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.y.ncols()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Observations entering the conditional likelihood.
    pub fn t_eff(&self) -> usize {
        self.y.nrows() - self.p
    }

    /// Sample standard deviation of each series.
    pub fn series_sd(&self) -> Vec<f64> {
        (0..self.n()).map(|j| sample_sd(self.y.column(j).as_slice())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkageParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl ShrinkageParams {
    /// Checks `λ1 ∈ (0, 5]`, `λ2 ∈ (0, 1]`, `λ3 ∈ (0, 5]`.
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let ok = |v: f64, hi: f64| v > 0.0 && v <= hi;
        if !(ok(lambda1, 5.0) && ok(lambda2, 1.0) && ok(lambda3, 5.0)) {
            return Err(Error::InvalidArgument(format!(
                "shrinkage ({lambda1}, {lambda2}, {lambda3}) outside (0,5] x (0,1] x (0,5]"
            )));
        }
        Ok(Self { lambda1, lambda2, lambda3 })
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        match x {
            [a, b, c] => Self::new(*a, *b, *c),
            _ => Err(Error::DimensionMismatch { expected: 3, found: x.len() }),
        }
    }

    /// `(0.1, 0.5, 1)`, the conventional setting.
    pub fn standard() -> Self {
        Self { lambda1: 0.1, lambda2: 0.5, lambda3: 1.0 }
    }
}

/// Scaling of the own-lag prior variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OwnLagScaling {
    /// `λ1² / (l^λ3)²`.
    #[default]
    Plain,
    /// `λ1² / (l^λ3 s_r)²`.
    BySeriesScale,
}

/// Diagonal of `Ω_Π`: own lag `λ1²/(l^λ3)²`, cross lag `(λ1 λ2 s_r)² / (l^λ3 s_j)²`.
pub fn build_pi_prior_covariance(
    lam: &ShrinkageParams,
    series_sd: &[f64],
    n: usize,
    p: usize,
    scaling: OwnLagScaling,
) -> Result<Vec<f64>> {
    if series_sd.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: series_sd.len() });
    }
    if series_sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument("series scales must be positive".into()));
    }
    let mut omega = Vec::with_capacity(n * n * p);
    for r in 0..n {
        for l in 1..=p {
            let decay = (l as f64).powf(lam.lambda3);
            for j in 0..n {
                let v = if j == r {
                    let own = lam.lambda1 / decay;
                    match scaling {
                        OwnLagScaling::Plain => own * own,
                        OwnLagScaling::BySeriesScale => (own / series_sd[r]).powi(2),
                    }
                } else {
                    (lam.lambda1 * lam.lambda2 * series_sd[r] / (decay * series_sd[j])).powi(2)
                };
                omega.push(v);
            }
        }
    }
    Ok(omega)
}

/// Prior on `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaPrior {
    /// `p(Σ) ∝ |Σ|^{-(n+1)/2}`.
    Jeffreys,
    InverseWishart { scale: DMatrix<f64>, dof: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStatePrior {
    /// Prior means of `vec(Ψ)` (column-major, length `n·m`).
    pub psi_mean: Vec<f64>,
    pub psi_sd: Vec<f64>,
    /// Prior means of `Π`, row by row (length `n²p`).
    pub pi_mean: Vec<f64>,
    pub sigma: SigmaPrior,
}

impl SteadyStatePrior {
    fn validate(&self, n: usize, m: usize, p: usize) -> Result<()> {
        if self.psi_mean.len() != n * m || self.psi_sd.len() != n * m {
            return Err(Error::DimensionMismatch { expected: n * m, found: self.psi_mean.len().min(self.psi_sd.len()) });
        }
        if self.pi_mean.len() != n * n * p {
            return Err(Error::DimensionMismatch { expected: n * n * p, found: self.pi_mean.len() });
        }
        if self.psi_sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("steady-state prior sds must be positive".into()));
        }
        if let SigmaPrior::InverseWishart { scale, dof } = &self.sigma {
            if scale.shape() != (n, n) || *dof <= n as f64 - 1.0 {
                return Err(Error::InvalidArgument("inverse-Wishart prior on Σ is malformed".into()));
            }
            linalg::cholesky(scale)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvarState {
    /// `[Π_1 … Π_p]`, `n x np`.
    pub pi: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// `n x m`.
    pub psi: DMatrix<f64>,
}

fn pi_to_vec(pi: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(pi.transpose().as_slice())
}

fn pi_from_vec(v: &DVector<f64>, n: usize, np: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(np, n, v.as_slice()).transpose()
}

/// Σ⁻¹ from its Cholesky factor. Σ is n x n and the Kronecker and sandwich
/// products below need it explicitly.
fn sigma_inverse(chol: &Chol) -> DMatrix<f64> {
    chol.inverse()
}

/// The steady-state BVAR posterior at fixed shrinkage.
#[derive(Debug, Clone)]
pub struct SteadyStateBvar {
    data: BvarData,
    prior: SteadyStatePrior,
    omega_pi: Vec<f64>,
}

impl SteadyStateBvar {
    /// `series_sd` defaults to the sample standard deviations of the data.
    pub fn new(
        data: BvarData,
        prior: SteadyStatePrior,
        lam: &ShrinkageParams,
        series_sd: Option<&[f64]>,
        scaling: OwnLagScaling,
    ) -> Result<Self> {
        let (n, m, p) = (data.n(), data.m(), data.p());
        prior.validate(n, m, p)?;
        let sd = series_sd.map_or_else(|| data.series_sd(), <[f64]>::to_vec);
        let omega_pi = build_pi_prior_covariance(lam, &sd, n, p, scaling)?;
        Ok(Self { data, prior, omega_pi })
    }

    pub fn data(&self) -> &BvarData {
        &self.data
    }

    pub fn prior(&self) -> &SteadyStatePrior {
        &self.prior
    }

    pub fn omega_pi(&self) -> &[f64] {
        &self.omega_pi
    }

    /// Same prior and shrinkage on new observations of the same shape.
    pub fn with_observations(&self, y: DMatrix<f64>) -> Result<Self> {
        let data = BvarData::new(y, self.data.x.clone(), self.data.p)?;
        Ok(Self { data, prior: self.prior.clone(), omega_pi: self.omega_pi.clone() })
    }

    fn demeaned(&self, psi: &DMatrix<f64>) -> DMatrix<f64> {
        &self.data.y - &self.data.x * psi.transpose()
    }

    /// Responses `ỹ_t`, `t >= p`, and lagged regressors `[ỹ_{t-1} … ỹ_{t-p}]`.
    fn regression(&self, psi: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, p) = (self.data.n(), self.data.p);
        let te = self.data.t_eff();
        let yt = self.demeaned(psi);
        let resp = yt.rows(p, te).into_owned();
        let mut w = DMatrix::zeros(te, n * p);
        for l in 1..=p {
            w.view_mut((0, (l - 1) * n), (te, n)).copy_from(&yt.rows(p - l, te));
        }
        (resp, w)
    }

    fn residuals(&self, pi: &DMatrix<f64>, psi: &DMatrix<f64>) -> DMatrix<f64> {
        let (resp, w) = self.regression(psi);
        resp - w * pi.transpose()
    }

    /// Cholesky of the precision and the mean of `vec(Π) | Σ, Ψ, y`.
    pub fn pi_conditional(&self, sigma: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<(Chol, DVector<f64>)> {
        let k = self.omega_pi.len();
        let (resp, w) = self.regression(psi);
        let sinv = sigma_inverse(&linalg::cholesky(sigma)?);
        let mut prec = sinv.kronecker(&(w.transpose() * &w));
        let cross = w.transpose() * resp * &sinv;
        let mut lin = DVector::from_column_slice(cross.as_slice());
        for i in 0..k {
            prec[(i, i)] += 1.0 / self.omega_pi[i];
            lin[i] += self.prior.pi_mean[i] / self.omega_pi[i];
        }
        let (chol, _) = linalg::cholesky_jittered(&linalg::symmetrize(prec))?;
        let mean = chol.solve(&lin);
        Ok((chol, mean))
    }

    /// Scale and degrees of freedom of `Σ | Π, Ψ, y`.
    pub fn sigma_conditional(&self, pi: &DMatrix<f64>, psi: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        let e = self.residuals(pi, psi);
        let mut scale = e.transpose() * &e;
        let mut dof = self.data.t_eff() as f64;
        if let SigmaPrior::InverseWishart { scale: s0, dof: nu0 } = &self.prior.sigma {
            scale += s0;
            dof += nu0;
        }
        (linalg::symmetrize(scale), dof)
    }

    /// Cholesky of the precision and the mean of `vec(Ψ) | Π, Σ, y`.
    pub fn psi_conditional(&self, pi: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<(Chol, DVector<f64>)> {
        let (n, m, p) = (self.data.n(), self.data.m(), self.data.p);
        let sinv = sigma_inverse(&linalg::cholesky(sigma)?);
        let k = n * m;
        let mut prec = DMatrix::<f64>::zeros(k, k);
        let mut lin = DVector::<f64>::zeros(k);
        let lags: Vec<DMatrix<f64>> = (0..p).map(|l| pi.columns(l * n, n).into_owned()).collect();
        let mut u = DMatrix::<f64>::zeros(n, k);
        for t in p..self.data.y.nrows() {
            // u_t = x_t' ⊗ I - Σ_l x_{t-l}' ⊗ Π_l, q_t = y_t - Σ_l Π_l y_{t-l}
            let mut q = self.data.y.row(t).transpose();
            for c in 0..m {
                let mut block = DMatrix::<f64>::identity(n, n) * self.data.x[(t, c)];
                for (l, pl) in lags.iter().enumerate() {
                    block -= pl * self.data.x[(t - l - 1, c)];
                }
                u.view_mut((0, c * n), (n, n)).copy_from(&block);
            }
            for (l, pl) in lags.iter().enumerate() {
                q -= pl * self.data.y.row(t - l - 1).transpose();
            }
            let us = u.transpose() * &sinv;
            prec += &us * &u;
            lin += us * q;
        }
        for i in 0..k {
            let v = self.prior.psi_sd[i] * self.prior.psi_sd[i];
            prec[(i, i)] += 1.0 / v;
            lin[i] += self.prior.psi_mean[i] / v;
        }
        let (chol, _) = linalg::cholesky_jittered(&linalg::symmetrize(prec))?;
        let mean = chol.solve(&lin);
        Ok((chol, mean))
    }

    pub fn sample_pi(&self, state: &mut BvarState, rng: &mut dyn RngCore) -> Result<()> {
        let (chol, mean) = self.pi_conditional(&state.sigma, &state.psi)?;
        let v = linalg::sample_mvn_precision(&mean, &chol, rng);
        state.pi = pi_from_vec(&v, self.data.n(), self.data.n() * self.data.p);
        Ok(())
    }

    pub fn sample_sigma(&self, state: &mut BvarState, rng: &mut dyn RngCore) -> Result<()> {
        let (scale, dof) = self.sigma_conditional(&state.pi, &state.psi);
        state.sigma = linalg::sample_inverse_wishart(&scale, dof, rng)?;
        Ok(())
    }

    pub fn sample_psi(&self, state: &mut BvarState, rng: &mut dyn RngCore) -> Result<()> {
        let (chol, mean) = self.psi_conditional(&state.pi, &state.sigma)?;
        let v = linalg::sample_mvn_precision(&mean, &chol, rng);
        state.psi = DMatrix::from_column_slice(self.data.n(), self.data.m(), v.as_slice());
        Ok(())
    }

    /// Gaussian log-likelihood conditional on the first `p` observations.
    pub fn log_likelihood(&self, state: &BvarState) -> Result<f64> {
        let chol = linalg::cholesky(&state.sigma)?;
        let e = self.residuals(&state.pi, &state.psi);
        let te = e.nrows() as f64;
        let n = self.data.n() as f64;
        let w = linalg::solve_lower(&chol, &e.transpose());
        Ok(-0.5 * (te * n * LN_2PI + te * linalg::log_det(&chol) + w.norm_squared()))
    }

    /// Independent Gaussian terms for `Π` and `Ψ` plus the `Σ` prior; the Jeffreys
    /// term is `-(n+1)/2 · ln|Σ|` without a normalising constant.
    pub fn log_prior_density(&self, state: &BvarState) -> Result<f64> {
        let vpi = pi_to_vec(&state.pi);
        let mut lp: f64 = (0..vpi.len())
            .map(|i| normal_log_density(vpi[i], self.prior.pi_mean[i], self.omega_pi[i]))
            .sum();
        lp += state
            .psi
            .as_slice()
            .iter()
            .zip(self.prior.psi_mean.iter().zip(&self.prior.psi_sd))
            .map(|(v, (m, s))| normal_log_density(*v, *m, s * s))
            .sum::<f64>();
        lp += match &self.prior.sigma {
            SigmaPrior::Jeffreys => {
                let n = self.data.n() as f64;
                -0.5 * (n + 1.0) * linalg::log_det(&linalg::cholesky(&state.sigma)?)
            }
            SigmaPrior::InverseWishart { scale, dof } => linalg::inverse_wishart_log_density(&state.sigma, scale, *dof)?,
        };
        Ok(lp)
    }

    /// Draws `Ψ`, `Σ` and `Π` in turn from their full conditionals.
    pub fn gibbs_sweep(&self, state: &BvarState, rng: &mut dyn RngCore) -> Result<BvarState> {
        let mut next = state.clone();
        self.sample_psi(&mut next, rng)?;
        self.sample_sigma(&mut next, rng)?;
        self.sample_pi(&mut next, rng)?;
        Ok(next)
    }

    /// Prior means for `Π` and `Ψ`; `Σ` at the diagonal of sample variances.
    pub fn default_initial_state(&self) -> BvarState {
        let n = self.data.n();
        let np = n * self.data.p;
        let pi = pi_from_vec(&DVector::from_column_slice(&self.prior.pi_mean), n, np);
        let psi = DMatrix::from_column_slice(n, self.data.m(), &self.prior.psi_mean);
        let sd = self.data.series_sd();
        let sigma = DMatrix::from_fn(n, n, |i, j| if i == j { sd[i].max(1e-3).powi(2) } else { 0.0 });
        BvarState { pi, sigma, psi }
    }

    /// Draw from the prior; needs a proper prior on `Σ`.
    pub fn sample_prior(&self, rng: &mut dyn RngCore) -> Result<BvarState> {
        let n = self.data.n();
        let SigmaPrior::InverseWishart { scale, dof } = &self.prior.sigma else {
            return Err(Error::InvalidArgument("cannot sample from an improper prior on Σ".into()));
        };
        let vpi = DVector::from_fn(self.omega_pi.len(), |i, _| {
            self.prior.pi_mean[i] + self.omega_pi[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        let psi = DMatrix::from_fn(n, self.data.m(), |i, c| {
            let k = c * n + i;
            self.prior.psi_mean[k] + self.prior.psi_sd[k] * rng.sample::<f64, _>(StandardNormal)
        });
        let sigma = linalg::sample_inverse_wishart(scale, *dof, rng)?;
        Ok(BvarState { pi: pi_from_vec(&vpi, n, n * self.data.p), sigma, psi })
    }

    /// New observations from the model at `state`, keeping the first `p` rows of the
    /// current data as initial conditions.
    pub fn simulate_observations(&self, state: &BvarState, rng: &mut dyn RngCore) -> Result<DMatrix<f64>> {
        let p = self.data.p;
        let initial = self.data.y.rows(0, p).into_owned();
        simulate_data(state, self.data.x(), &initial, rng)
    }
}

/// Simulates `y_t = Ψ x_t + Σ_l Π_l (y_{t-l} - Ψ x_{t-l}) + ε_t` for every row of `x`
/// after the `p` rows of `initial`.
pub fn simulate_data(
    state: &BvarState,
    x: &DMatrix<f64>,
    initial: &DMatrix<f64>,
    rng: &mut dyn RngCore,
) -> Result<DMatrix<f64>> {
    let (p, n) = initial.shape();
    let t = x.nrows();
    if state.pi.shape() != (n, n * p) || state.psi.shape() != (n, x.ncols()) || t <= p {
        return Err(Error::InvalidArgument("simulation inputs have inconsistent shapes".into()));
    }
    let chol = linalg::cholesky(&state.sigma)?;
    let mean = |s: usize| &state.psi * x.row(s).transpose();
    let mut y = DMatrix::zeros(t, n);
    y.rows_mut(0, p).copy_from(initial);
    for s in p..t {
        let mut v = mean(s);
        for l in 1..=p {
            let dev = y.row(s - l).transpose() - mean(s - l);
            v += state.pi.columns((l - 1) * n, n) * dev;
        }
        let shock = linalg::sample_mvn(&DVector::zeros(n), &chol, rng);
        y.row_mut(s).copy_from(&(v + shock).transpose());
    }
    Ok(y)
}

impl ThreeBlockModel for SteadyStateBvar {
    type State = BvarState;

    fn initial_state(&self) -> BvarState {
        self.default_initial_state()
    }

    fn sample_block(&self, block: Block, state: &mut BvarState, rng: &mut dyn RngCore) -> Result<()> {
        match block {
            Block::Exact => self.sample_psi(state, rng),
            Block::Reduced => self.sample_sigma(state, rng),
            Block::Marginal => self.sample_pi(state, rng),
        }
    }

    fn log_conditional(&self, block: Block, at: &BvarState, given: &BvarState) -> Result<f64> {
        match block {
            Block::Exact => {
                let (chol, mean) = self.psi_conditional(&given.pi, &given.sigma)?;
                let v = DVector::from_column_slice(at.psi.as_slice());
                Ok(linalg::mvn_log_density_precision(&v, &mean, &chol))
            }
            Block::Reduced => {
                let (scale, dof) = self.sigma_conditional(&given.pi, &given.psi);
                linalg::inverse_wishart_log_density(&at.sigma, &scale, dof)
            }
            Block::Marginal => {
                let (chol, mean) = self.pi_conditional(&given.sigma, &given.psi)?;
                Ok(linalg::mvn_log_density_precision(&pi_to_vec(&at.pi), &mean, &chol))
            }
        }
    }

    fn log_likelihood(&self, state: &BvarState) -> Result<f64> {
        SteadyStateBvar::log_likelihood(self, state)
    }

    fn log_prior(&self, state: &BvarState) -> Result<f64> {
        self.log_prior_density(state)
    }

    fn mean_state(&self, draws: &[BvarState]) -> BvarState {
        let k = draws.len() as f64;
        let mut acc = draws[0].clone();
        for d in &draws[1..] {
            acc.pi += &d.pi;
            acc.sigma += &d.sigma;
            acc.psi += &d.psi;
        }
        BvarState { pi: acc.pi / k, sigma: linalg::symmetrize(acc.sigma / k), psi: acc.psi / k }
    }
}

/// Settings for the incremental marginal likelihood estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSettings {
    pub burn: usize,
    pub lag: LagPolicy,
    pub scaling: OwnLagScaling,
    /// Scales used in the cross-lag variances; the data's sample sds when `None`.
    pub series_sd: Option<Vec<f64>>,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self { burn: 2500, lag: LagPolicy::default(), scaling: OwnLagScaling::Plain, series_sd: None }
    }
}

/// Chib's estimator of the steady-state BVAR log marginal likelihood at `lam`, extendable
/// batch by batch.
pub fn marginal_likelihood_estimator(
    data: &BvarData,
    prior: &SteadyStatePrior,
    lam: &ShrinkageParams,
    settings: &EstimatorSettings,
) -> Result<IncrementalChib<SteadyStateBvar>> {
    let model = SteadyStateBvar::new(data.clone(), prior.clone(), lam, settings.series_sd.as_deref(), settings.scaling)?;
    Ok(IncrementalChib::new(model, settings.burn, settings.lag))
}
