use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input has no tokens")]
    EmptyInput,

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("sequence of {len} tokens exceeds backend maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("backend capability missing: {0}")]
    CapabilityMissing(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("weighted design matrix is singular; increase n_samples")]
    DegenerateDesign,

    #[error("budget {budget} too small, need at least {required}")]
    BudgetTooSmall { budget: usize, required: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("instance {0} has no gold label")]
    MissingGoldLabels(String),

    #[error("instance has no gold rationale")]
    MissingRationale,

    #[error("all attribution scores are zero")]
    AllZeroScores,

    #[error("cannot normalize a curve whose starting performance is zero")]
    ZeroBaselinePerformance,

    #[error("cell {0} mixes instance- and dataset-scope results")]
    InconsistentScopes(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invariant violated at row {row}: {message}")]
    InvariantViolation { row: usize, message: String },

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("API error (status {status}): {body}")]
    Api { status: u16, body: String },

    #[error("request timed out")]
    Timeout,

    #[error("remote error {code}: {message}")]
    Remote { code: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors that originate in the model backend rather than in user input.
    pub fn is_backend_error(&self) -> bool {
        matches!(
            self,
            Error::BackendUnavailable(_) | Error::Remote { .. } | Error::SequenceTooLong { .. }
        )
    }
}
