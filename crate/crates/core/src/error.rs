use alloc::string::String;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("class {0} has no members")]
    EmptyClass(u8),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("session {0} has no ad box but the style requests a placeholder")]
    MissingAdBox(String),
    #[error("empty set: {0}")]
    EmptySet(&'static str),
    #[error("search space is empty: {0}")]
    EmptySpace(&'static str),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("too few non-zero pairs: {0} (need at least 3)")]
    TooFewPairs(usize),
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("too few treatments: {0} (need at least 3)")]
    TooFewTreatments(usize),
}

impl Error {
    /// Stable machine-readable kind, used in `error:<kind>:` diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidValue(_) => "invalid-value",
            Error::EmptyClass(_) => "empty-class",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::MissingAdBox(_) => "missing-ad-box",
            Error::EmptySet(_) => "empty-set",
            Error::EmptySpace(_) => "empty-space",
            Error::SingleClass => "single-class",
            Error::TooFewPairs(_) => "too-few-pairs",
            Error::AllZeroDifferences => "all-zero-differences",
            Error::TooFewTreatments(_) => "too-few-treatments",
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidValue(msg.into())
}
