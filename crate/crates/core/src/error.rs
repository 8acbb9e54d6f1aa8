use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("field has no primitives")]
    EmptyField,
    #[error("quaternion has zero norm")]
    DegenerateRotation,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("patch size must be at least 2, got {0}")]
    InvalidPatchSize(usize),
    #[error("normalization mode mismatch")]
    ModeMismatch,
    #[error("neural color cache is stale (cached version {cached}, current {current})")]
    StaleCache { cached: u64, current: u64 },
    #[error("dataset has no training views")]
    EmptyDataset,
    #[error("camera ring is degenerate: all cameras coincide")]
    DegenerateCameraRing,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed PFM {}: {msg}", path.display())]
    Pfm { path: PathBuf, msg: String },
    #[error("malformed PLY {}: {msg}", path.display())]
    Ply { path: PathBuf, msg: String },
    #[error("image error at {}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at iteration {iter}: {diagnostic}")]
    NonFiniteLoss { iter: usize, diagnostic: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
