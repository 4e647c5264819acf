use crate::autodiff::AutodiffError;
use crate::linalg::LinalgError;
use thiserror::Error;

/// Errors raised above the numeric substrate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("covariance buffer used in eval mode before any training update")]
    UninitializedBuffer,
    #[error("mesh has {points} points but the attention needs at least k = {k}")]
    MeshTooSmall { points: usize, k: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("mesh carries no regular-grid metadata")]
    NotAGrid,
    #[error("subsampling factor {factor} does not divide grid extent {extent}")]
    IncompatibleFactor { factor: usize, extent: usize },
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("target norm below 1e-12; relative error undefined")]
    ZeroTarget,
    #[error("scheduler step {step} outside [0, {total}]")]
    StepOutOfRange { step: usize, total: usize },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
