use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = RrmError> = std::result::Result<T, E>;

/// Broad failure class, used by the command line to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    DataFormat,
    Numeric,
}

#[derive(Debug, thiserror::Error)]
pub enum RrmError {
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },

    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("engine state is uninitialized; run a keyframe pass first")]
    Uninitialized,

    #[error("state was built for a different model ({expected} linear layers, got {found})")]
    StateMismatch { expected: usize, found: usize },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("polynomial fit needs at least {needed} distinct abscissae, got {found}")]
    Underdetermined { needed: usize, found: usize },

    #[error("singular normal equations")]
    Singular,

    #[error("total RRM workload is zero; speedup is unbounded")]
    ZeroWorkload,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated data at byte offset {offset}: need {needed} more bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("{count} trailing bytes at byte offset {offset}")]
    TrailingBytes { offset: usize, count: usize },

    #[error("unknown layer kind tag {tag} at byte offset {offset}")]
    UnknownLayerKind { tag: u32, offset: usize },

    #[error("inconsistent frames: {0}")]
    InconsistentFrames(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl RrmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RrmError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        use RrmError::*;
        match self {
            NonFinite(_) | Singular | ZeroWorkload => ErrorClass::Numeric,
            BadMagic { .. }
            | UnsupportedVersion(_)
            | Truncated { .. }
            | TrailingBytes { .. }
            | UnknownLayerKind { .. }
            | InconsistentFrames(_)
            | InvalidModel(_)
            | InvalidLayer { .. }
            | ShapeMismatch { .. }
            | StateMismatch { .. }
            | Io { .. }
            | Json(_)
            | Csv(_) => ErrorClass::DataFormat,
            Uninitialized | Empty(_) | InvalidArgument(_) | Underdetermined { .. } => {
                ErrorClass::Usage
            }
        }
    }
}
