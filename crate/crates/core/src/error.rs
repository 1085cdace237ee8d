use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("matrix is singular")]
    Singular,

    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transition matrix is not stable (spectral radius {0:.12}); stationary covariance undefined")]
    Unstable(f64),

    #[error("unsupported model order {0} (only 1 and 2 are supported)")]
    UnsupportedOrder(usize),

    #[error("degenerate innovation variance {value:e} at step {step}")]
    DegenerateInnovation { step: usize, value: f64 },

    #[error("degenerate design: all training inputs are identical")]
    DegenerateDesign,

    #[error("transition matrix has no real logarithm")]
    NoRealLogarithm,

    #[error("all {0} optimizer starts failed to evaluate")]
    AllStartsFailed(usize),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("{failed} of {total} Monte Carlo runs failed (limit 10%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
