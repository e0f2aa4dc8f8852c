use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("matrix not positive definite after regularization ({0})")]
    NotPositiveDefinite(String),

    #[error("batch of {batch} samples too small for {dim}-dimensional covariance")]
    BatchTooSmall { batch: usize, dim: usize },

    #[error("label {0} present in one dataset but missing in another")]
    EmptyClass(i64),

    #[error("label sets do not overlap")]
    LabelMismatch,

    #[error("conditioning mode requires DCCA projections but none were supplied")]
    ConditioningModeMismatch,

    #[error("degenerate chains: mean acceptance {0:.4} after burn-in")]
    DegenerateChains(f64),

    #[error("non-finite gradient encountered in leapfrog integration")]
    NonFiniteGradient,

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("classifier accuracy {accuracy:.4} below floor {floor:.4}")]
    AccuracyBelowFloor { accuracy: f64, floor: f64 },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
