//! Chib's marginal likelihood estimator for a three-block Gibbs sampler.
//!
//! The posterior ordinate at `θ*` is factorised as
//! `p(θ1*|θ2*,θ3*,y) · p(θ2*|θ3*,y) · p(θ3*|y)`. The first factor is a full
//! conditional evaluated exactly. The last is a Rao-Blackwellised average over the
//! full run. The middle one is averaged over a reduced run in which `θ3` is held at
//! `θ3*`. All densities are handled in log space.

mod nw;
mod toy;

pub use nw::{delta_method_se, nw_variance, select_q, LagSelection, DEFAULT_LAG};
pub use toy::ToyGaussianModel;

use rand::RngCore;

use crate::evaluator::{EstimateSnapshot, PrecisionEstimator};
use crate::stats::log_sum_exp;
use crate::{Error, Result};

/// Role of a parameter block in the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    /// `θ1`: its full conditional is evaluated exactly at `θ*`.
    Exact,
    /// `θ2`: ordinate averaged over the reduced run.
    Reduced,
    /// `θ3`: ordinate averaged over the full run, held at `θ3*` in the reduced run.
    Marginal,
}

/// Update order within one Gibbs iteration.
pub const CYCLE: [Block; 3] = [Block::Exact, Block::Reduced, Block::Marginal];

/// A posterior sampled by cycling through three full conditionals.
pub trait ThreeBlockModel {
    type State: Clone;

    fn initial_state(&self) -> Self::State;

    /// Replaces `block` of `state` by a draw from its full conditional.
    fn sample_block(&self, block: Block, state: &mut Self::State, rng: &mut dyn RngCore) -> Result<()>;

    /// `ln p(block of at | other blocks of given, y)`.
    fn log_conditional(&self, block: Block, at: &Self::State, given: &Self::State) -> Result<f64>;

    fn log_likelihood(&self, state: &Self::State) -> Result<f64>;

    fn log_prior(&self, state: &Self::State) -> Result<f64>;

    /// Component-wise mean of a non-empty slice of states.
    fn mean_state(&self, draws: &[Self::State]) -> Self::State;
}

fn sweep<M: ThreeBlockModel + ?Sized>(
    model: &M,
    state: &mut M::State,
    fixed: Option<Block>,
    iteration: usize,
    rng: &mut dyn RngCore,
) -> Result<()> {
    for block in CYCLE {
        if Some(block) != fixed {
            model
                .sample_block(block, state, rng)
                .map_err(|e| Error::Sampler { iteration, source: Box::new(e) })?;
        }
    }
    Ok(())
}

fn run_chain<M: ThreeBlockModel + ?Sized>(
    model: &M,
    start: M::State,
    fixed: Option<Block>,
    g: usize,
    burn: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<M::State>> {
    if g <= burn {
        return Err(Error::InvalidArgument(format!("need more iterations than burn-in (g {g}, burn {burn})")));
    }
    let mut state = start;
    let mut kept = Vec::with_capacity(g - burn);
    for it in 0..g {
        sweep(model, &mut state, fixed, it, rng)?;
        if it >= burn {
            kept.push(state.clone());
        }
    }
    Ok(kept)
}

/// `g` Gibbs iterations from the model's initial state; the last `g - burn` are returned.
pub fn run_full_gibbs<M: ThreeBlockModel + ?Sized>(
    model: &M,
    g: usize,
    burn: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<M::State>> {
    run_chain(model, model.initial_state(), None, g, burn, rng)
}

/// Gibbs run started at `theta_star` with the marginal block held at its value there.
pub fn run_reduced_gibbs<M: ThreeBlockModel + ?Sized>(
    model: &M,
    theta_star: &M::State,
    g: usize,
    burn: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<M::State>> {
    run_chain(model, theta_star.clone(), Some(Block::Marginal), g, burn, rng)
}

/// Posterior mean of the retained draws.
pub fn select_theta_star<M: ThreeBlockModel + ?Sized>(model: &M, draws: &[M::State]) -> Result<M::State> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no retained draws".into()));
    }
    Ok(model.mean_state(draws))
}

/// Per-draw log ordinates: `log_h1[g] = ln p(θ3*|θ1⁽ᵍ⁾,θ2⁽ᵍ⁾,y)` from the full run and
/// `log_h2[g] = ln p(θ2*|θ̃1⁽ᵍ⁾,θ3*,y)` from the reduced run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HSeries {
    pub log_h1: Vec<f64>,
    pub log_h2: Vec<f64>,
}

impl HSeries {
    /// Densities divided by their series maximum, with the log scale factors.
    pub fn scaled(&self) -> (Vec<f64>, Vec<f64>, f64, f64) {
        let rescale = |v: &[f64]| {
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (v.iter().map(|x| (x - m).exp()).collect::<Vec<_>>(), m)
        };
        let (h1, m1) = rescale(&self.log_h1);
        let (h2, m2) = rescale(&self.log_h2);
        (h1, h2, m1, m2)
    }
}

/// How the Newey-West lag is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LagPolicy {
    Fixed(usize),
    Aic { q_max: usize },
}

impl Default for LagPolicy {
    fn default() -> Self {
        LagPolicy::Aic { q_max: DEFAULT_LAG }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChibComponents {
    pub log_lik: f64,
    pub log_prior: f64,
    /// `ln p(θ1*|θ2*,θ3*,y)`
    pub log_post_exact: f64,
    /// `ln p̂(θ2*|θ3*,y)`
    pub log_post_reduced: f64,
    /// `ln p̂(θ3*|y)`
    pub log_post_marginal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChibEstimate {
    pub log_ml: f64,
    pub se: f64,
    pub components: ChibComponents,
    /// Iterations of the full run, burn-in included.
    pub g1: usize,
    /// Iterations of the reduced run, burn-in included.
    pub g2: usize,
    pub lag: LagSelection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChibOptions {
    pub g1: usize,
    pub g2: usize,
    pub burn: usize,
    pub lag: LagPolicy,
}

fn check_log_density(index: usize, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::BadDensity { index, log_value: v })
    }
}

fn log_mean_exp(v: &[f64]) -> f64 {
    log_sum_exp(v) - (v.len() as f64).ln()
}

/// Fixed ordinates at `θ*`.
#[derive(Debug, Clone, Copy)]
struct StarTerms {
    log_lik: f64,
    log_prior: f64,
    log_post_exact: f64,
}

impl StarTerms {
    fn at<M: ThreeBlockModel + ?Sized>(model: &M, star: &M::State) -> Result<Self> {
        let terms = Self {
            log_lik: model.log_likelihood(star)?,
            log_prior: model.log_prior(star)?,
            log_post_exact: model.log_conditional(Block::Exact, star, star)?,
        };
        for v in [terms.log_lik, terms.log_prior, terms.log_post_exact] {
            if !v.is_finite() {
                return Err(Error::BadDensity { index: 0, log_value: v });
            }
        }
        Ok(terms)
    }
}

fn assemble(star: StarTerms, h: &HSeries, lag: LagPolicy, g1: usize, g2: usize) -> Result<ChibEstimate> {
    if h.log_h1.is_empty() || h.log_h2.is_empty() {
        return Err(Error::InvalidArgument("empty ordinate series".into()));
    }
    let log_post_marginal = log_mean_exp(&h.log_h1);
    let log_post_reduced = log_mean_exp(&h.log_h2);
    let (s1, s2, m1, m2) = h.scaled();
    let selection = match lag {
        LagPolicy::Fixed(q) => LagSelection { q, fallback: false },
        LagPolicy::Aic { q_max } => select_q(&s1, &s2, q_max),
    };
    let q = selection.q.min(s1.len().min(s2.len()) - 1);
    let var = nw_variance(&s1, &s2, q)?;
    let h_bar = [(log_post_marginal - m1).exp(), (log_post_reduced - m2).exp()];
    let se = delta_method_se(&var, h_bar)?;
    let components = ChibComponents {
        log_lik: star.log_lik,
        log_prior: star.log_prior,
        log_post_exact: star.log_post_exact,
        log_post_reduced,
        log_post_marginal,
    };
    let log_ml = components.log_lik + components.log_prior
        - (components.log_post_exact + components.log_post_reduced + components.log_post_marginal);
    Ok(ChibEstimate { log_ml, se, components, g1, g2, lag: LagSelection { q, ..selection } })
}

fn marginal_ordinates<M: ThreeBlockModel + ?Sized>(
    model: &M,
    star: &M::State,
    draws: &[M::State],
    offset: usize,
) -> Result<Vec<f64>> {
    draws
        .iter()
        .enumerate()
        .map(|(i, d)| check_log_density(offset + i, model.log_conditional(Block::Marginal, star, d)?))
        .collect()
}

fn reduced_ordinates<M: ThreeBlockModel + ?Sized>(
    model: &M,
    star: &M::State,
    draws: &[M::State],
    offset: usize,
) -> Result<Vec<f64>> {
    draws
        .iter()
        .enumerate()
        .map(|(i, d)| check_log_density(offset + i, model.log_conditional(Block::Reduced, star, d)?))
        .collect()
}

/// Full run, `θ*` at the posterior mean, reduced run, and the assembled estimate.
pub fn chib_logml<M: ThreeBlockModel + ?Sized>(
    model: &M,
    options: &ChibOptions,
    rng: &mut dyn RngCore,
) -> Result<(ChibEstimate, HSeries)> {
    let full = run_full_gibbs(model, options.g1, options.burn, rng)?;
    let star = select_theta_star(model, &full)?;
    let log_h1 = marginal_ordinates(model, &star, &full, 0)?;
    drop(full);
    let reduced = run_reduced_gibbs(model, &star, options.g2, options.burn, rng)?;
    let log_h2 = reduced_ordinates(model, &star, &reduced, 0)?;
    let h = HSeries { log_h1, log_h2 };
    let est = assemble(StarTerms::at(model, &star)?, &h, options.lag, options.g1, options.g2)?;
    Ok((est, h))
}

struct Running<S> {
    full: S,
    reduced: S,
    star: S,
    terms: StarTerms,
}

/// Chib's estimator that can be extended batch by batch.
///
/// The first call to [`PrecisionEstimator::extend`] runs both chains for the requested
/// number of iterations (which must exceed the burn-in) and fixes `θ*` from the full
/// run. Later calls advance both chains by the same number of iterations; `θ*` stays
/// put. [`PrecisionEstimator::draws_used`] counts iterations per chain.
pub struct IncrementalChib<M: ThreeBlockModel> {
    model: M,
    burn: usize,
    lag: LagPolicy,
    iterations: usize,
    running: Option<Running<M::State>>,
    h: HSeries,
}

impl<M: ThreeBlockModel> IncrementalChib<M> {
    pub fn new(model: M, burn: usize, lag: LagPolicy) -> Self {
        Self { model, burn, lag, iterations: 0, running: None, h: HSeries::default() }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn theta_star(&self) -> Option<&M::State> {
        self.running.as_ref().map(|r| &r.star)
    }

    pub fn h_series(&self) -> &HSeries {
        &self.h
    }

    /// Current estimate with its components; `None` before the first extension.
    pub fn estimate(&self) -> Result<Option<ChibEstimate>> {
        match &self.running {
            None => Ok(None),
            Some(r) => assemble(r.terms, &self.h, self.lag, self.iterations, self.iterations).map(Some),
        }
    }

    fn start(&mut self, g: usize, rng: &mut dyn RngCore) -> Result<()> {
        let full = run_full_gibbs(&self.model, g, self.burn, rng)?;
        let star = select_theta_star(&self.model, &full)?;
        self.h.log_h1 = marginal_ordinates(&self.model, &star, &full, 0)?;
        let full_last = full.last().cloned().expect("g > burn leaves at least one draw");
        drop(full);
        let reduced = run_reduced_gibbs(&self.model, &star, g, self.burn, rng)?;
        self.h.log_h2 = reduced_ordinates(&self.model, &star, &reduced, 0)?;
        let reduced_last = reduced.last().cloned().expect("g > burn leaves at least one draw");
        let terms = StarTerms::at(&self.model, &star)?;
        self.running = Some(Running { full: full_last, reduced: reduced_last, star, terms });
        self.iterations = g;
        Ok(())
    }

    fn advance(&mut self, g: usize, rng: &mut dyn RngCore) -> Result<()> {
        let r = self.running.as_mut().expect("chains started");
        for _ in 0..g {
            let it = self.iterations;
            sweep(&self.model, &mut r.full, None, it, rng)?;
            let v = self.model.log_conditional(Block::Marginal, &r.star, &r.full)?;
            self.h.log_h1.push(check_log_density(self.h.log_h1.len(), v)?);
            sweep(&self.model, &mut r.reduced, Some(Block::Marginal), it, rng)?;
            let v = self.model.log_conditional(Block::Reduced, &r.star, &r.reduced)?;
            self.h.log_h2.push(check_log_density(self.h.log_h2.len(), v)?);
            self.iterations += 1;
        }
        Ok(())
    }
}

impl<M: ThreeBlockModel> PrecisionEstimator for IncrementalChib<M> {
    fn extend(&mut self, draws: usize, rng: &mut dyn RngCore) -> Result<EstimateSnapshot> {
        if self.running.is_none() {
            self.start(draws, rng)?;
        } else {
            self.advance(draws, rng)?;
        }
        let est = self.estimate()?.expect("chains started");
        Ok(EstimateSnapshot { estimate: est.log_ml, se: est.se })
    }

    fn draws_used(&self) -> usize {
        self.iterations
    }
}
