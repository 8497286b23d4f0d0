use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad parameters supplied by the caller.
    Usage,
    /// Inputs on disk or in memory violate a format or invariant.
    Data,
    /// A threshold could not be calibrated from the available scores.
    Calibration,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: u64, message: String },

    #[error("duplicate image_id {0:?}")]
    DuplicateImage(String),

    #[error("unknown image_id {0:?}")]
    UnknownImage(String),

    #[error("image {image_id:?}: embedding_index {index} out of range for store of {count} vectors")]
    EmbeddingIndex {
        image_id: String,
        index: usize,
        count: usize,
    },

    #[error("embedding file: {0}")]
    EmbeddingFormat(String),

    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("embedding vector {0} has zero norm")]
    ZeroNormVector(usize),

    #[error("facial hair ratio {value} for {context} is outside [0, 1]")]
    RatioOutOfRange { context: String, value: f64 },

    #[error("image {0:?} has no facial hair ratio (supply one or a mask)")]
    MissingRatio(String),

    #[error("mask {path}: {message}")]
    Mask { path: PathBuf, message: String },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("mask shapes differ: {left_width}x{left_height} vs {right_width}x{right_height}")]
    ShapeMismatch {
        left_width: usize,
        left_height: usize,
        right_width: usize,
        right_height: usize,
    },

    #[error("ratio buckets overlap or are out of order: {0}")]
    BucketOverlap(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unknown ratio class {0:?}")]
    UnknownClass(String),

    #[error("malformed pair category {0:?} (expected e.g. \"cl_vs_fh_L1\")")]
    MalformedCategory(String),

    #[error("vector dimension mismatch: {left} vs {right}")]
    VectorLength { left: usize, right: usize },

    #[error("score set configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error(
        "threshold {threshold} lies below the retained tail of {retained} of {count} scores; \
         increase tail_frac"
    )]
    TailTooShort {
        threshold: f64,
        retained: usize,
        count: u64,
    },

    #[error("cannot calibrate group {group}: {reason}")]
    CannotCalibrate { group: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("score cache: {0}")]
    Cache(String),

    #[error("oracle limited to {limit} images, got {got}")]
    OracleTooLarge { limit: usize, got: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) | Error::UnknownClass(_) | Error::MalformedCategory(_) => {
                ErrorClass::Usage
            }
            Error::CannotCalibrate { .. } | Error::TailTooShort { .. } => ErrorClass::Calibration,
            _ => ErrorClass::Data,
        }
    }
}
