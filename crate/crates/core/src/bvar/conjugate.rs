//! VAR with a matrix-normal inverse-Wishart prior, `Y = X B + E`, rows of `E` iid
//! `N(0, Σ)`, `B | Σ ~ MN(B0, Ω0, Σ)`, `Σ ~ IW(S0, ν0)`. The evidence has a closed
//! form, so this model checks Chib's estimator end to end.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::chib::{Block, ThreeBlockModel};
use crate::linalg::{self, Chol};
use crate::stats::{ln_multigamma, LN_2PI};
use crate::{seeded_rng, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MniwPrior {
    /// `k x n`.
    pub b0: DMatrix<f64>,
    /// Row covariance of `B`, `k x k`.
    pub omega0: DMatrix<f64>,
    pub s0: DMatrix<f64>,
    pub nu0: f64,
}

impl MniwPrior {
    fn validate(&self, k: usize, n: usize) -> Result<()> {
        if self.b0.shape() != (k, n) || self.omega0.shape() != (k, k) || self.s0.shape() != (n, n) {
            return Err(Error::InvalidArgument("MNIW prior has inconsistent shapes".into()));
        }
        if !(self.nu0 > n as f64 - 1.0) {
            return Err(Error::InvalidArgument(format!("MNIW prior is improper: ν0 = {} with n = {n}", self.nu0)));
        }
        linalg::cholesky(&self.omega0)?;
        linalg::cholesky(&self.s0)?;
        Ok(())
    }
}

/// Posterior hyperparameters: `P̄ = Ω0⁻¹ + X'X`, `B̄ = P̄⁻¹(Ω0⁻¹B0 + X'Y)`,
/// `S̄ = S0 + Y'Y + B0'Ω0⁻¹B0 - B̄'P̄B̄`, `ν̄ = ν0 + T`.
#[derive(Debug, Clone)]
struct Posterior {
    precision: DMatrix<f64>,
    precision_chol: Chol,
    mean: DMatrix<f64>,
    scale: DMatrix<f64>,
    dof: f64,
}

fn posterior(y: &DMatrix<f64>, x: &DMatrix<f64>, prior: &MniwPrior) -> Result<Posterior> {
    let omega_chol = linalg::cholesky(&prior.omega0)?;
    let prior_prec = omega_chol.inverse();
    let precision = linalg::symmetrize(&prior_prec + x.transpose() * x);
    let precision_chol = linalg::cholesky(&precision)?;
    let prior_lin = &prior_prec * &prior.b0;
    let mean = precision_chol.solve(&(&prior_lin + x.transpose() * y));
    let scale = &prior.s0 + y.transpose() * y + prior.b0.transpose() * prior_lin
        - mean.transpose() * &precision * &mean;
    Ok(Posterior {
        precision,
        precision_chol,
        mean,
        scale: linalg::symmetrize(scale),
        dof: prior.nu0 + y.nrows() as f64,
    })
}

/// Exact `ln p(Y | X)` under a proper MNIW prior:
/// `-(Tn/2) ln π + ln Γ_n(ν̄/2) - ln Γ_n(ν0/2) + (ν0/2) ln|S0| - (ν̄/2) ln|S̄| - (n/2)(ln|P̄| + ln|Ω0|)`.
pub fn conjugate_logml_oracle(y: &DMatrix<f64>, x: &DMatrix<f64>, prior: &MniwPrior) -> Result<f64> {
    let (t, n) = y.shape();
    if x.nrows() != t {
        return Err(Error::DimensionMismatch { expected: t, found: x.nrows() });
    }
    prior.validate(x.ncols(), n)?;
    let post = posterior(y, x, prior)?;
    let nf = n as f64;
    let ln_s0 = linalg::log_det(&linalg::cholesky(&prior.s0)?);
    let ln_sbar = linalg::log_det(&linalg::cholesky(&post.scale)?);
    let ln_omega0 = linalg::log_det(&linalg::cholesky(&prior.omega0)?);
    let ln_pbar = linalg::log_det(&post.precision_chol);
    Ok(-0.5 * t as f64 * nf * std::f64::consts::PI.ln() + ln_multigamma(n, 0.5 * post.dof)
        - ln_multigamma(n, 0.5 * prior.nu0)
        + 0.5 * prior.nu0 * ln_s0
        - 0.5 * post.dof * ln_sbar
        - 0.5 * nf * (ln_pbar + ln_omega0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateState {
    /// `k x n`, intercept rows first.
    pub b: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

/// Conjugate VAR(p) as a three-block model: intercept rows of `B` (exact block), `Σ`
/// (reduced block) and lag rows of `B` (marginal block).
#[derive(Debug, Clone)]
pub struct ConjugateBvar {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    prior: MniwPrior,
    intercept_rows: usize,
    post: Posterior,
}

/// Regressors `[1, y_{t-1}, …, y_{t-p}]` for `t = p..T`.
fn lagged_design(y: &DMatrix<f64>, p: usize, intercept: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let (t, n) = y.shape();
    let te = t - p;
    let a = usize::from(intercept);
    let mut x = DMatrix::zeros(te, a + n * p);
    if intercept {
        x.column_mut(0).fill(1.0);
    }
    for l in 1..=p {
        x.view_mut((0, a + (l - 1) * n), (te, n)).copy_from(&y.rows(p - l, te));
    }
    (y.rows(p, te).into_owned(), x)
}

impl ConjugateBvar {
    /// Conditions on the first `p` rows of `y`.
    pub fn new(y: &DMatrix<f64>, p: usize, intercept: bool, prior: MniwPrior) -> Result<Self> {
        let (t, n) = y.shape();
        let k = usize::from(intercept) + n * p;
        if t <= p + k {
            return Err(Error::InvalidArgument(format!("{t} observations are too few for a VAR({p}) in {n} series")));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("VAR data"));
        }
        prior.validate(k, n)?;
        let (resp, x) = lagged_design(y, p, intercept);
        let post = posterior(&resp, &x, &prior)?;
        Ok(Self { y: resp, x, prior, intercept_rows: usize::from(intercept), post })
    }

    /// `B0 = 0`, `Ω0 = diag(10² for the intercept, 0.5² for lags)`, `ν0 = n + 4`,
    /// `S0 = (ν0 - n - 1) I` so that the prior mean of `Σ` is `I`.
    pub fn default_prior(n: usize, p: usize, intercept: bool) -> MniwPrior {
        let a = usize::from(intercept);
        let k = a + n * p;
        let nu0 = n as f64 + 4.0;
        MniwPrior {
            b0: DMatrix::zeros(k, n),
            omega0: DMatrix::from_fn(k, k, |i, j| match (i == j, i < a) {
                (false, _) => 0.0,
                (true, true) => 100.0,
                (true, false) => 0.25,
            }),
            s0: DMatrix::identity(n, n) * (nu0 - n as f64 - 1.0),
            nu0,
        }
    }

    /// Bivariate VAR(1) with intercept on `t` simulated observations, with the default prior.
    pub fn reference(t: usize, seed: u64) -> Result<Self> {
        let intercept = DVector::from_vec(vec![1.0, -0.5]);
        let pi = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let chol = linalg::cholesky(&sigma)?;
        let mut rng = seeded_rng(seed, 0);
        let mut y = DMatrix::zeros(t, 2);
        let mut prev = DVector::from_vec(vec![2.0, -0.7]);
        y.row_mut(0).copy_from(&prev.transpose());
        for s in 1..t {
            let next = &intercept + &pi * &prev + linalg::sample_mvn(&DVector::zeros(2), &chol, &mut rng);
            y.row_mut(s).copy_from(&next.transpose());
            prev = next;
        }
        Self::new(&y, 1, true, Self::default_prior(2, 1, true))
    }

    pub fn responses(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn prior(&self) -> &MniwPrior {
        &self.prior
    }

    pub fn log_ml_oracle(&self) -> Result<f64> {
        conjugate_logml_oracle(&self.y, &self.x, &self.prior)
    }

    fn rows(&self, block: Block) -> (usize, usize) {
        let k = self.x.ncols();
        match block {
            Block::Exact => (0, self.intercept_rows),
            _ => (self.intercept_rows, k - self.intercept_rows),
        }
    }

    /// `B_a | B_b, Σ ~ MN(B̄_a - P̄_aa⁻¹ P̄_ab (B_b - B̄_b), P̄_aa⁻¹, Σ)`; returns the
    /// Cholesky factor of `P̄_aa` and the mean.
    fn row_conditional(&self, block: Block, b: &DMatrix<f64>) -> Result<(Chol, DMatrix<f64>)> {
        let k = self.x.ncols();
        let (start, len) = self.rows(block);
        let others: Vec<usize> = (0..k).filter(|i| *i < start || *i >= start + len).collect();
        let p = &self.post.precision;
        let paa = p.view((start, start), (len, len)).into_owned();
        let pab = DMatrix::from_fn(len, others.len(), |i, j| p[(start + i, others[j])]);
        let dev = DMatrix::from_fn(others.len(), b.ncols(), |i, j| b[(others[i], j)] - self.post.mean[(others[i], j)]);
        let chol = linalg::cholesky(&paa)?;
        let mean = self.post.mean.rows(start, len) - chol.solve(&(pab * dev));
        Ok((chol, mean))
    }

    fn sigma_conditional(&self, b: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        let dev = b - &self.post.mean;
        let scale = &self.post.scale + dev.transpose() * &self.post.precision * &dev;
        (linalg::symmetrize(scale), self.post.dof + self.x.ncols() as f64)
    }
}

/// `ln MN(D + M; M, P⁻¹, Σ)` from the factors of the row precision `P` and of `Σ`.
fn matrix_normal_log_density(dev: &DMatrix<f64>, row_prec: &Chol, sigma: &Chol) -> f64 {
    let (k, n) = dev.shape();
    // tr(Σ⁻¹ D' P D) = |L_Σ⁻¹ D' L_P|²
    let lp = row_prec.l_dirty().lower_triangle();
    let w = linalg::solve_lower(sigma, &(dev.transpose() * lp));
    -0.5 * ((k * n) as f64 * LN_2PI - n as f64 * linalg::log_det(row_prec)
        + k as f64 * linalg::log_det(sigma)
        + w.norm_squared())
}

impl ThreeBlockModel for ConjugateBvar {
    type State = ConjugateState;

    fn initial_state(&self) -> ConjugateState {
        let n = self.y.ncols();
        ConjugateState { b: self.prior.b0.clone(), sigma: DMatrix::identity(n, n) }
    }

    fn sample_block(&self, block: Block, state: &mut ConjugateState, rng: &mut dyn RngCore) -> Result<()> {
        if block == Block::Reduced {
            let (scale, dof) = self.sigma_conditional(&state.b);
            state.sigma = linalg::sample_inverse_wishart(&scale, dof, rng)?;
            return Ok(());
        }
        let (start, len) = self.rows(block);
        if len == 0 {
            return Ok(());
        }
        let (chol, mean) = self.row_conditional(block, &state.b)?;
        let sc = linalg::cholesky(&state.sigma)?;
        let z = DMatrix::from_fn(len, state.b.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        // rows: L_P⁻ᵀ Z has covariance P⁻¹; columns: Z L_Σ' has covariance Σ
        let draw = mean + linalg::solve_lower_transpose(&chol, &z) * sc.l_dirty().lower_triangle().transpose();
        state.b.rows_mut(start, len).copy_from(&draw);
        Ok(())
    }

    fn log_conditional(&self, block: Block, at: &ConjugateState, given: &ConjugateState) -> Result<f64> {
        if block == Block::Reduced {
            let (scale, dof) = self.sigma_conditional(&given.b);
            return linalg::inverse_wishart_log_density(&at.sigma, &scale, dof);
        }
        let (start, len) = self.rows(block);
        if len == 0 {
            return Ok(0.0);
        }
        let (chol, mean) = self.row_conditional(block, &given.b)?;
        let dev = at.b.rows(start, len) - mean;
        Ok(matrix_normal_log_density(&dev, &chol, &linalg::cholesky(&given.sigma)?))
    }

    fn log_likelihood(&self, state: &ConjugateState) -> Result<f64> {
        let sc = linalg::cholesky(&state.sigma)?;
        let e = &self.y - &self.x * &state.b;
        let (t, n) = e.shape();
        let w = linalg::solve_lower(&sc, &e.transpose());
        Ok(-0.5 * ((t * n) as f64 * LN_2PI + t as f64 * linalg::log_det(&sc) + w.norm_squared()))
    }

    fn log_prior(&self, state: &ConjugateState) -> Result<f64> {
        let omega_chol = linalg::cholesky(&self.prior.omega0)?;
        let dev = &state.b - &self.prior.b0;
        let (k, n) = dev.shape();
        let sc = linalg::cholesky(&state.sigma)?;
        let u = linalg::solve_lower(&omega_chol, &dev);
        let w = linalg::solve_lower(&sc, &u.transpose());
        let mn = -0.5 * ((k * n) as f64 * LN_2PI + n as f64 * linalg::log_det(&omega_chol)
            + k as f64 * linalg::log_det(&sc)
            + w.norm_squared());
        Ok(mn + linalg::inverse_wishart_log_density(&state.sigma, &self.prior.s0, self.prior.nu0)?)
    }

    fn mean_state(&self, draws: &[ConjugateState]) -> ConjugateState {
        let k = draws.len() as f64;
        let mut acc = draws[0].clone();
        for d in &draws[1..] {
            acc.b += &d.b;
            acc.sigma += &d.sigma;
        }
        ConjugateState { b: acc.b / k, sigma: linalg::symmetrize(acc.sigma / k) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chib::{chib_logml, ChibOptions, LagPolicy};
    use crate::stats::{ln_gamma, log_sum_exp, normal_log_density};

    fn scalar_prior(b0: f64, omega0: f64, s0: f64, nu0: f64) -> MniwPrior {
        MniwPrior {
            b0: DMatrix::from_element(1, 1, b0),
            omega0: DMatrix::from_element(1, 1, omega0),
            s0: DMatrix::from_element(1, 1, s0),
            nu0,
        }
    }

    #[test]
    fn matches_normal_inverse_gamma_evidence() {
        // y_i ~ N(μ, σ²), μ | σ² ~ N(μ0, σ²/κ0), σ² ~ IG(a0, b0)
        let ys = [1.3, 0.2, 2.1, 1.7, 0.9, 1.1, 1.6];
        let (mu0, kappa0, a0, b0) = (0.5, 0.4, 3.0, 2.0);
        let n = ys.len() as f64;
        let ybar = ys.iter().sum::<f64>() / n;
        let ss: f64 = ys.iter().map(|v| (v - ybar).powi(2)).sum();
        let an = a0 + n / 2.0;
        let bn = b0 + 0.5 * (ss + kappa0 * n * (ybar - mu0).powi(2) / (kappa0 + n));
        let textbook = ln_gamma(an) - ln_gamma(a0) + a0 * f64::ln(b0) - an * bn.ln()
            + 0.5 * (kappa0 / (kappa0 + n)).ln()
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        let y = DMatrix::from_column_slice(ys.len(), 1, &ys);
        let x = DMatrix::from_element(ys.len(), 1, 1.0);
        let oracle = conjugate_logml_oracle(&y, &x, &scalar_prior(mu0, 1.0 / kappa0, 2.0 * b0, 2.0 * a0)).unwrap();
        assert!((oracle - textbook).abs() < 1e-12, "{oracle} vs {textbook}");
    }

    /// Trapezoid rule over `(β, ln σ²)` for the AR(1) without intercept.
    fn quadrature_log_evidence(ys: &[f64], prior: &MniwPrior) -> f64 {
        let (b0, om, s0, nu0) = (prior.b0[0], prior.omega0[0], prior.s0[0], prior.nu0);
        let (nb, nv) = (1601, 1401);
        let (blo, bhi, vlo, vhi) = (-4.0, 4.0, -9.0, 5.0);
        let (hb, hv) = ((bhi - blo) / (nb - 1) as f64, (vhi - vlo) / (nv - 1) as f64);
        let mut terms = Vec::with_capacity(nb * nv);
        for j in 0..nv {
            let lv = vlo + j as f64 * hv;
            let v = lv.exp();
            // IG(ν0/2, s0/2) on σ², times the Jacobian σ² of the log transform
            let a = 0.5 * nu0;
            let log_ig = a * (0.5 * s0).ln() - ln_gamma(a) - (a + 1.0) * lv - 0.5 * s0 / v + lv;
            let wv = if j == 0 || j == nv - 1 { 0.5 } else { 1.0 };
            for i in 0..nb {
                let beta = blo + i as f64 * hb;
                let wb = if i == 0 || i == nb - 1 { 0.5 } else { 1.0 };
                let mut ll = normal_log_density(beta, b0, v * om);
                for t in 1..ys.len() {
                    ll += normal_log_density(ys[t], beta * ys[t - 1], v);
                }
                terms.push(ll + log_ig + (wv * wb * hb * hv).ln());
            }
        }
        log_sum_exp(&terms)
    }

    #[test]
    fn matches_quadrature_for_short_autoregression() {
        let ys = [0.4, 0.9, 0.3, -0.2, 0.5, 1.1, 0.6, 0.2, -0.4];
        let y = DMatrix::from_column_slice(ys.len(), 1, &ys);
        for prior in [scalar_prior(0.2, 0.5, 1.0, 4.0), scalar_prior(0.0, 0.5, 4.0, 4.0)] {
            let model = ConjugateBvar::new(&y, 1, false, prior.clone()).unwrap();
            assert_eq!(model.responses().nrows(), 8);
            let oracle = model.log_ml_oracle().unwrap();
            let quad = quadrature_log_evidence(&ys, &prior);
            assert!((oracle - quad).abs() < 1e-6, "{oracle} vs {quad}");
        }
    }

    #[test]
    fn evidence_responds_to_prior_scale_as_quadrature_does() {
        let ys = [0.4, 0.9, 0.3, -0.2, 0.5, 1.1, 0.6, 0.2, -0.4];
        let y = DMatrix::from_column_slice(ys.len(), 1, &ys);
        let at = |s0: f64| {
            let prior = scalar_prior(0.0, 0.5, s0, 4.0);
            let oracle = ConjugateBvar::new(&y, 1, false, prior.clone()).unwrap().log_ml_oracle().unwrap();
            (oracle, quadrature_log_evidence(&ys, &prior))
        };
        let (lo, hi) = (at(0.5), at(8.0));
        assert_eq!((hi.0 > lo.0), (hi.1 > lo.1));
    }

    #[test]
    fn improper_prior_is_rejected() {
        let y = DMatrix::from_element(10, 1, 1.0);
        let x = DMatrix::from_element(10, 1, 1.0);
        assert!(conjugate_logml_oracle(&y, &x, &scalar_prior(0.0, 1.0, 1.0, -1.0)).is_err());
    }

    #[test]
    fn bayes_identity_holds_at_any_state() {
        // ln p(Y) = ln p(Y|B,Σ) + ln p(B,Σ) - ln p(B|Σ,Y) - ln p(Σ|Y)
        let model = ConjugateBvar::reference(40, 3).unwrap();
        let state = ConjugateState {
            b: DMatrix::from_row_slice(3, 2, &[0.8, -0.3, 0.4, 0.1, 0.05, 0.2]),
            sigma: DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.2, 0.6]),
        };
        let post = &model.post;
        let sc = linalg::cholesky(&state.sigma).unwrap();
        let b_given_sigma = matrix_normal_log_density(&(&state.b - &post.mean), &post.precision_chol, &sc);
        let sigma_marg = linalg::inverse_wishart_log_density(&state.sigma, &post.scale, post.dof).unwrap();
        let v = model.log_likelihood(&state).unwrap() + model.log_prior(&state).unwrap() - b_given_sigma - sigma_marg;
        assert!((v - model.log_ml_oracle().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn chib_recovers_closed_form() {
        let model = ConjugateBvar::reference(60, 5).unwrap();
        let opts = ChibOptions { g1: 3000, g2: 3000, burn: 300, lag: LagPolicy::default() };
        let (est, _) = chib_logml(&model, &opts, &mut seeded_rng(5, 1)).unwrap();
        let exact = model.log_ml_oracle().unwrap();
        assert!((est.log_ml - exact).abs() <= 3.0 * est.se, "{} vs {exact} (se {})", est.log_ml, est.se);
    }
}
