use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice dimension {0} (supported: 1..=8)")]
    InvalidDimension(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("quadrature did not converge: refinements differ by {difference:e} (tolerance {tolerance:e})")]
    NonConvergedQuadrature { difference: f64, tolerance: f64 },

    #[error("kernel is recurrent in d={0}; the Green integral diverges")]
    RecurrentKernel(usize),

    #[error("kernel is not strongly transient in d={0}; G* diverges")]
    NotStronglyTransient(usize),

    #[error("empty box")]
    EmptyBox,

    #[error("no replica hit the event; one-sided 95% upper bound {upper_bound:e} from {replicas} replicas")]
    ZeroHits { upper_bound: f64, replicas: usize },

    #[error("series did not converge within the iteration cap")]
    NonConvergent,

    #[error("{0} is outside the domain")]
    DomainError(String),

    #[error("dimension {0} is too low (need d >= 5)")]
    DimensionTooLow(usize),

    #[error("variational ascent ended at a non-positive value {0}")]
    NonPositiveResult(f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("reproducibility check failed: {0}")]
    Reproducibility(String),

    #[error("non-finite value in results: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
