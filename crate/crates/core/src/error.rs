use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("model not trained: {0}")]
    Untrained(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("perturbation budget violated: |z - z_src|_inf = {norm} > {budget}")]
    BudgetViolated { norm: f64, budget: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
