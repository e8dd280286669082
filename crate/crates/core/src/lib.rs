//! Bayesian optimization for objectives whose evaluation precision is chosen by
//! the caller, typically a log marginal likelihood estimated by MCMC.
//!
//! The crate is organised bottom-up:
//!
//! - [`gp`]: Gaussian process regression with per-observation noise variances.
//! - [`acquisition`]: PI, EI, EI-per-cost and the effort-normalised acquisition,
//!   plus a multistart maximiser.
//! - [`effort`]: a GP on `log G` predicting how many draws an evaluation will use.
//! - [`evaluator`]: the batch-wise early-stopping evaluation protocol.
//! - [`chib`]: Chib's estimator for three-block Gibbs samplers with Newey-West
//!   standard errors, exposed as an incrementally extendable estimator.
//! - [`bvar`]: the steady-state BVAR sampler and a conjugate reference model.
//! - [`driver`]: the optimization loops (precision-aware BO, plain BO-EI, grid).
//! - [`bench`]: synthetic objectives with simulated MCMC noise.

// `!(x > 0.0)` rejects NaN as well, which `x <= 0.0` would not
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod bench;
pub mod bvar;
pub mod chib;
pub mod driver;
pub mod effort;
mod error;
pub mod evaluator;
pub mod gp;
pub mod linalg;
pub mod stats;

pub use error::{Error, Result};

/// Axis-aligned search box.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidArgument("bounds must have at least one dimension".into()));
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "bounds dimension {i}: [{lo}, {hi}] is not a finite interval"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (&lo, &hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(lo, hi);
        }
    }

    /// Uniform draw inside the box.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

/// Deterministic RNG for a given seed and stream index.
pub fn seeded_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
