use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no eigenvalue of the centered connectivity matrix exceeds {threshold:e}")]
    EmptyBasis { threshold: f64 },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("insufficient sample: {n} sites for {k} covariates")]
    InsufficientSample { n: usize, k: usize },

    #[error("total weight {weight} does not exceed the covariate count {k}")]
    ProfileDegenerate { weight: f64, k: usize },

    #[error("estimated noise variance is zero (perfect fit)")]
    ZeroVariance,

    #[error("singular normal equations in the block of covariate {covariate}")]
    Singular { covariate: usize },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("non-finite objective after {iterations} iterations (last finite loglik {loglik})")]
    Optimizer {
        iterations: usize,
        loglik: f64,
        alpha: Vec<f64>,
        tau2: Vec<f64>,
    },

    #[error("site {site} has zero total weight")]
    Coverage { site: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sub-model {model}: {source}")]
    SubModel {
        model: usize,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used by front ends to map errors onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Numerical,
    Config,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Input(_)
            | Error::Dimension(_)
            | Error::DegenerateGeometry(_)
            | Error::InsufficientSample { .. } => ErrorKind::Input,
            Error::Config(_) | Error::Coverage { .. } => ErrorKind::Config,
            Error::SubModel { source, .. } => source.kind(),
            _ => ErrorKind::Numerical,
        }
    }

    pub(crate) fn in_model(self, model: usize) -> Self {
        Error::SubModel {
            model,
            source: Box::new(self),
        }
    }
}
