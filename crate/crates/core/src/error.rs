use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("degenerate intensity range")]
    DegenerateRange,

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("{what} dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("patch grid exceeds volume bounds")]
    GridOutOfBounds,

    #[error("feature index {index} out of range for dimension {dim}")]
    FeatureIndex { index: usize, dim: usize },

    #[error("zero-variance data")]
    ZeroVariance,

    #[error("ridge system could not be solved (last lambda {lambda:e})")]
    SingularSystem { lambda: f64 },

    #[error("not enough samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("training and test sets share volume {0:?}")]
    Overlap(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    /// True for errors caused by a broken internal invariant rather than bad
    /// input data.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Internal(_))
    }
}
