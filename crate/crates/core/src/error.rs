use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "matrix of size {size} is not positive definite after {attempts} jitter attempts \
         (last jitter {jitter:e}, diagonal range [{min_diag:e}, {max_diag:e}])"
    )]
    NotPositiveDefinite {
        size: usize,
        attempts: usize,
        jitter: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("effort model needs at least {required} records, have {available}")]
    ColdStart { required: usize, available: usize },

    #[error("sampler failed at iteration {iteration}: {source}")]
    Sampler {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("density at draw {index} is not positive and finite (log value {log_value})")]
    BadDensity { index: usize, log_value: f64 },

    #[error("estimator failed after {draws} draws: {source}")]
    Estimator {
        draws: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("acquisition function is non-finite at every candidate")]
    AcquisitionNonFinite,
}
