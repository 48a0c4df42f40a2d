//! Error type shared across the crate.

use crate::trace::Trace;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("matrix is not positive definite ({context}); consider a larger noise floor")]
    NotPositiveDefinite { context: String },

    #[error(
        "kernel block {block} is not positive definite during factorization; \
         consider a larger noise floor"
    )]
    BlockNotPositiveDefinite { block: usize },

    #[error("Cholesky cache is stale: kernel hyperparameters changed since it was built")]
    StaleCache,

    #[error("{solver} diverged at epoch {epoch}: residual is no longer finite")]
    SolverDiverged {
        solver: &'static str,
        epoch: usize,
        trace: Box<Trace>,
    },

    #[error("conjugate gradients broke down at iteration {iteration} (column {column}): non-positive direction curvature")]
    CgBreakdown {
        iteration: usize,
        column: usize,
        trace: Box<Trace>,
    },

    #[error("non-finite gradient at optimizer step {step}; aborting training")]
    NonFiniteGradient {
        step: usize,
        log: Box<crate::gp::TrainLog>,
    },

    #[error("malformed dataset row at line {line}: {message}")]
    DataFormat { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Stable machine-readable kind tag, used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::IndexOutOfRange(_) => "index_out_of_range",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::BlockNotPositiveDefinite { .. } => "block_not_positive_definite",
            Error::StaleCache => "stale_cache",
            Error::SolverDiverged { .. } => "solver_diverged",
            Error::CgBreakdown { .. } => "cg_breakdown",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::DataFormat { .. } => "data_format",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Toml(_) => "toml",
        }
    }
}
