use thiserror::Error;

/// Errors produced by the data pipeline, model construction, and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("channel '{0}' has no valid samples; cannot interpolate")]
    EmptyChannel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("label {label} out of range [0, {n_classes})")]
    LabelOutOfRange { label: i64, n_classes: usize },

    #[error("leave-one-subject-out requires at least 3 subjects, got {0}")]
    TooFewSubjects(usize),

    #[error("window size {window} does not divide cleanly: {reason}")]
    BadWindow { window: usize, reason: String },

    #[error("non-finite loss encountered at {context}: {value}")]
    NonFiniteLoss { context: String, value: f64 },

    #[error("unknown adapter '{0}'")]
    UnknownAdapter(String),

    #[error("missing common channel '{channel}' in dataset '{dataset}'")]
    MissingCommonChannel { channel: String, dataset: String },

    #[error("archive format error: {0}")]
    Archive(String),

    #[error("target batch supplied but transductive mode is disabled")]
    UnexpectedTargetBatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}
