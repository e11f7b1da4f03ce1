use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive linear power {0}; cannot convert to dB")]
    NonPositivePower(f64),

    #[error("negative soil residual {residual:e} after removing the vegetation term")]
    NegativeResidual { residual: f64 },

    #[error("invalid WCM parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },

    #[error("missing feature: {0}")]
    MissingFeature(String),

    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("invariant violated at row {row}, column `{column}`: {message}")]
    InvariantViolation {
        row: usize,
        column: String,
        message: String,
    },

    #[error("too few sites: {sites} sites for {folds} folds")]
    TooFewSites { sites: usize, folds: usize },

    #[error("checkpoint format `{found}` is not supported (expected `{expected}`)")]
    CheckpointVersion { found: String, expected: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
