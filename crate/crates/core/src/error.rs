use thiserror::Error;

/// Errors produced anywhere in the training and interval pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("record {0} has feature norm above 1")]
    NormViolation(usize),
    #[error("record {0} has a label outside {{-1, +1}}")]
    BadLabel(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("budget kinds differ within a split")]
    MixedBudgetKinds,
    #[error("converting zCDP to approximate DP requires delta in (0, 1)")]
    MissingDelta,
    #[error("unsupported budget conversion: {0}")]
    UnsupportedConversion(String),
    #[error("interval endpoint order violated at coordinate {0}")]
    InvertedInterval(usize),
    #[error("regularization c = {c} is below the objective perturbation minimum {min_c}")]
    BudgetTooSmall { c: f64, min_c: f64 },
    #[error("solver did not reach tolerance within {0} iterations")]
    NoConvergence(usize),
    #[error("symmetric eigendecomposition failed to converge")]
    EigenFailure,
    #[error("matrix is not symmetric positive definite above floor {floor}: {reason}")]
    NotPositiveDefinite { floor: f64, reason: String },
    #[error("mechanism mismatch: {0}")]
    MechanismMismatch(String),
    #[error("quantile requested from an empty sample")]
    EmptySamples,
    #[error("unknown category `{value}` in column `{column}`")]
    UnknownCategory { column: String, value: String },
    #[error("target column must hold exactly two distinct values, found {0}")]
    NotBinaryTarget(usize),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("cannot parse `{value}` in column `{column}` (row {row})")]
    Parse {
        column: String,
        row: usize,
        value: String,
    },
    #[error("{failed} of {total} replicates failed; first failure at replicate {first}: {source}")]
    ReplicateFailed {
        failed: usize,
        total: usize,
        first: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
