//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or image shapes do not line up. `context` names the offending
    /// operation or graph node.
    #[error("shape mismatch at {context}: {detail}")]
    ShapeMismatch { context: String, detail: String },

    /// A forward op produced NaN or infinity. Names the graph node.
    #[error("non-finite output at node {node}")]
    NonFinite { node: String },

    /// Backward pass requested without a recorded tape or on a non-scalar
    /// output.
    #[error("autodiff: {0}")]
    Autodiff(String),

    /// A point map was used in a frame it is not expressed in.
    #[error("frame mismatch: map is in frame {actual:?}, expected {expected:?}")]
    FrameMismatch { expected: String, actual: String },

    /// Invalid camera, pose, box or config parameters.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Normalization failed because all valid points coincide.
    #[error("degenerate point set: zero spatial extent")]
    DegeneratePoints,

    /// Nearest-neighbour search against a map with no valid pixels.
    #[error("nearest-neighbour base map has no valid pixels")]
    EmptyBase,

    /// File format violation (bad magic, version, header).
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    /// Checkpoint format version not supported by this build.
    #[error("checkpoint {path}: format version {found} (supported: {supported})")]
    CheckpointVersion { path: String, found: u32, supported: u32 },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { context: context.into(), detail: detail.into() }
    }
}
