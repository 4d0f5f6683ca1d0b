//! Crate-wide error type.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor or parameter shape did not satisfy an op's contract.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An architecture description is internally inconsistent.
    #[error("invalid architecture spec: {0}")]
    InvalidSpec(String),

    /// Inference-mode batch norm was requested before any statistics existed.
    #[error("batch norm running statistics are uninitialized; train the model or load weights first")]
    BatchNormUninitialized,

    /// A caller-supplied value violated an operation precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration file failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A serialized artifact (weights, checkpoint, trace) failed to parse.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// Random placement could not satisfy the requested constraints.
    #[error("placement infeasible: {0}")]
    PlacementInfeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
