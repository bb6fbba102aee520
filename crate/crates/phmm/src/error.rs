use thiserror::Error;

/// Errors produced by model construction, fitting, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for a {n_states}-state model")]
    InvalidLabel { label: usize, n_states: usize },

    #[error("degenerate weight scheme: {0}")]
    DegenerateScheme(String),

    #[error("zero likelihood: {0}")]
    ZeroLikelihood(String),

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("model not identifiable: {0}")]
    NotIdentifiable(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("cannot split series {0}: fewer than two labelled indices")]
    CannotSplit(String),

    #[error("invalid fold plan: {0}")]
    InvalidFoldPlan(String),

    #[error("AUC undefined: need at least one positive and one negative score")]
    UndefinedAuc,

    #[error("state space too large to enumerate: {0}")]
    TooLarge(String),

    #[error("missing channel: {0}")]
    MissingChannel(String),

    #[error("degenerate dive: {0}")]
    DegenerateDive(String),

    #[error("baseline calibration needs at least one confirmed positive")]
    NoCalibrationData,

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
