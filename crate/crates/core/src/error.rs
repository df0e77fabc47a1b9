use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid mixture ({field}): {reason}")]
    InvalidMixture { field: String, reason: String },

    #[error("matrix is not symmetric positive-definite: {0}")]
    NotSpd(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid bracket [{lo}, {hi}]: g(lo) = {g_lo}, g(hi) = {g_hi} share a strict sign")]
    InvalidBracket { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },

    #[error("root solver hit {iterations} iterations; last bracket [{lo}, {hi}]")]
    RootNotConverged { iterations: usize, lo: f64, hi: f64 },

    #[error("quadrature budget exhausted: best estimate {estimate}, estimated error {error_estimate}")]
    QuadratureBudget { estimate: f64, error_estimate: f64 },

    #[error("map evaluation failed at coordinate {coordinate} for input {input:?}: {source}")]
    MapEval {
        coordinate: usize,
        input: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}
