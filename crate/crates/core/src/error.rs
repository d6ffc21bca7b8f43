use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind}: shape mismatch: {detail}")]
    ShapeMismatch { kind: &'static str, detail: String },

    #[error("{kind}: input {input} contains a non-finite value")]
    NonFiniteInput { kind: &'static str, input: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tensor has no provenance record and does not require grad")]
    MissingProvenance,

    #[error("non-finite loss term `{0}`")]
    NonFiniteLoss(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(kind: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { kind, detail: detail.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
