use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimensions(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("variance parameter {name} must be positive, got {value}")]
    NonPositiveVariance { name: String, value: f64 },

    #[error("observed covariance is not positive definite ({state})")]
    NotPositiveDefinite { state: String },

    #[error("covariates of block {block} are collinear (cross-product matrix is singular)")]
    CollinearCovariates { block: String },

    #[error("degenerate posterior for block {block}: loading denominator {value} is not positive")]
    DegeneratePosterior { block: String, value: f64 },

    #[error("structural system is singular")]
    SingularStructural,

    #[error("residual block {block} has zero variance, principal component undefined")]
    ZeroVarianceBlock { block: String },

    #[error("EM iteration {iteration} failed: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Config(String),

    #[error("{path}: {message}")]
    Load { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
