//! Linear-Gaussian model with three scalar blocks and a closed-form evidence.
//!
//! `y = A θ + e`, `e ~ N(0, σ² I)`, `θ_k ~ N(μ_k, τ_k²)` independently.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{Block, ThreeBlockModel};
use crate::linalg;
use crate::stats::normal_log_density;
use crate::{seeded_rng, Error, Result};

#[derive(Debug, Clone)]
pub struct ToyGaussianModel {
    design: DMatrix<f64>,
    y: DVector<f64>,
    noise_var: f64,
    prior_mean: [f64; 3],
    prior_var: [f64; 3],
    col_sq: [f64; 3],
}

fn index(block: Block) -> usize {
    match block {
        Block::Exact => 0,
        Block::Reduced => 1,
        Block::Marginal => 2,
    }
}

impl ToyGaussianModel {
    pub fn new(
        design: DMatrix<f64>,
        y: DVector<f64>,
        noise_var: f64,
        prior_mean: [f64; 3],
        prior_var: [f64; 3],
    ) -> Result<Self> {
        if design.ncols() != 3 || design.nrows() != y.len() {
            return Err(Error::DimensionMismatch { expected: 3, found: design.ncols() });
        }
        if !(noise_var > 0.0) || prior_var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument("toy model variances must be positive".into()));
        }
        let col_sq = [0, 1, 2].map(|k| design.column(k).norm_squared());
        Ok(Self { design, y, noise_var, prior_mean, prior_var, col_sq })
    }

    fn simulated(design: DMatrix<f64>, seed: u64) -> Self {
        let truth = DVector::from_vec(vec![1.0, -0.5, 0.8]);
        let noise_var: f64 = 0.25;
        let mut rng = seeded_rng(seed, 0);
        let mean = &design * truth;
        let y = DVector::from_fn(mean.len(), |i, _| mean[i] + noise_var.sqrt() * rng.sample::<f64, _>(StandardNormal));
        Self::new(design, y, noise_var, [0.5, -0.3, 0.2], [1.0, 2.0, 0.5]).expect("valid toy configuration")
    }

    /// Twelve observations on a quadratic design; the blocks are correlated a posteriori.
    pub fn standard() -> Self {
        let n = 12;
        let design = DMatrix::from_fn(n, 3, |i, j| {
            let t = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            match j {
                0 => 1.0,
                1 => t + 0.4,
                _ => t * t + 0.3 * t,
            }
        });
        Self::simulated(design, 11)
    }

    /// Orthogonal design columns, so the blocks are independent a posteriori.
    pub fn orthogonal() -> Self {
        let design = DMatrix::from_fn(12, 3, |i, j| match j {
            0 => 1.0,
            1 => if i % 2 == 0 { 1.0 } else { -1.0 },
            _ => if (i / 2) % 2 == 0 { 1.0 } else { -1.0 },
        });
        Self::simulated(design, 12)
    }

    fn posterior_precision(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut prec = self.design.transpose() * &self.design / self.noise_var;
        let mut lin = self.design.transpose() * &self.y / self.noise_var;
        for k in 0..3 {
            prec[(k, k)] += 1.0 / self.prior_var[k];
            lin[k] += self.prior_mean[k] / self.prior_var[k];
        }
        (prec, lin)
    }

    fn posterior(&self) -> (DVector<f64>, DMatrix<f64>) {
        let (prec, lin) = self.posterior_precision();
        let chol = linalg::cholesky(&prec).expect("posterior precision is positive definite");
        (chol.solve(&lin), chol.inverse())
    }

    /// Marginal posterior means and standard deviations of the three blocks.
    pub fn posterior_moments(&self) -> ([f64; 3], [f64; 3]) {
        let (m, cov) = self.posterior();
        ([m[0], m[1], m[2]], [0, 1, 2].map(|k| cov[(k, k)].sqrt()))
    }

    /// Mode (and mean) of the joint posterior.
    pub fn posterior_mode(&self) -> [f64; 3] {
        self.posterior_moments().0
    }

    /// Means and standard deviations of the first two blocks given the marginal block.
    pub fn conditional_moments_given_marginal(&self, theta3: f64) -> ([f64; 2], [f64; 2]) {
        let (prec, _) = self.posterior_precision();
        let (m, _) = self.posterior();
        let paa = prec.view((0, 0), (2, 2)).into_owned();
        let pa3 = prec.view((0, 2), (2, 1)).into_owned();
        let chol = linalg::cholesky(&paa).expect("positive definite");
        let shift = chol.solve(&(pa3 * (theta3 - m[2])));
        let cov = chol.inverse();
        ([m[0] - shift[0], m[1] - shift[1]], [cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt()])
    }

    /// `ln N(y; A μ, σ² I + A diag(τ²) A')`.
    pub fn analytic_log_ml(&self) -> f64 {
        let n = self.y.len();
        let tau = DMatrix::from_diagonal(&DVector::from_row_slice(&self.prior_var));
        let cov = DMatrix::identity(n, n) * self.noise_var + &self.design * tau * self.design.transpose();
        let mean = &self.design * DVector::from_row_slice(&self.prior_mean);
        let chol = linalg::cholesky(&cov).expect("marginal covariance is positive definite");
        linalg::mvn_log_density(&self.y, &mean, &chol)
    }

    /// Exact joint posterior log density.
    pub fn exact_log_posterior(&self, theta: &[f64; 3]) -> f64 {
        let (prec, lin) = self.posterior_precision();
        let chol = linalg::cholesky(&prec).expect("positive definite");
        let mean = chol.solve(&lin);
        linalg::mvn_log_density_precision(&DVector::from_row_slice(theta), &mean, &chol)
    }

    fn conditional(&self, k: usize, theta: &[f64; 3]) -> (f64, f64) {
        let col = self.design.column(k);
        let mut cross = 0.0;
        for i in 0..self.y.len() {
            let mut r = self.y[i];
            for j in (0..3).filter(|&j| j != k) {
                r -= self.design[(i, j)] * theta[j];
            }
            cross += col[i] * r;
        }
        let prec = 1.0 / self.prior_var[k] + self.col_sq[k] / self.noise_var;
        let mean = (self.prior_mean[k] / self.prior_var[k] + cross / self.noise_var) / prec;
        (mean, 1.0 / prec)
    }
}

impl ThreeBlockModel for ToyGaussianModel {
    type State = [f64; 3];

    fn initial_state(&self) -> [f64; 3] {
        self.prior_mean
    }

    fn sample_block(&self, block: Block, state: &mut [f64; 3], rng: &mut dyn RngCore) -> Result<()> {
        let k = index(block);
        let (m, v) = self.conditional(k, state);
        state[k] = m + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
        Ok(())
    }

    fn log_conditional(&self, block: Block, at: &[f64; 3], given: &[f64; 3]) -> Result<f64> {
        let k = index(block);
        let (m, v) = self.conditional(k, given);
        Ok(normal_log_density(at[k], m, v))
    }

    fn log_likelihood(&self, state: &[f64; 3]) -> Result<f64> {
        let mean = &self.design * DVector::from_row_slice(state);
        Ok((0..self.y.len()).map(|i| normal_log_density(self.y[i], mean[i], self.noise_var)).sum())
    }

    fn log_prior(&self, state: &[f64; 3]) -> Result<f64> {
        Ok((0..3).map(|k| normal_log_density(state[k], self.prior_mean[k], self.prior_var[k])).sum())
    }

    fn mean_state(&self, draws: &[[f64; 3]]) -> [f64; 3] {
        let n = draws.len() as f64;
        let mut m = [0.0; 3];
        for d in draws {
            for k in 0..3 {
                m[k] += d[k];
            }
        }
        m.map(|v| v / n)
    }
}
