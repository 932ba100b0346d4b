use std::path::PathBuf;

use thiserror::Error;

/// Every failure the codec library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sampling ratio {ratio} with block size {block_size} yields zero measurements")]
    ZeroMeasurements { ratio: f64, block_size: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{filters} filters requested but only {positions} distinct window positions exist")]
    TooManyFilters { filters: usize, positions: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("filter {0} has an all-zero window and cannot be normalized")]
    DegenerateFilter(usize),

    #[error("image {width}x{height} is not divisible by {multiple}")]
    BadDimensions {
        width: usize,
        height: usize,
        multiple: usize,
    },

    #[error("bad measurement plane shape: {0}")]
    BadPlaneShape(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("corrupt container: {0}")]
    CorruptContainer(String),

    #[error("codec unavailable: {0}")]
    CodecUnavailable(String),

    #[error("codec failure: {message}\n{diagnostics}")]
    CodecFailure {
        message: String,
        diagnostics: String,
    },

    #[error("quality {quality} outside [{min}, {max}] for {codec}")]
    QualityOutOfRange {
        codec: &'static str,
        quality: f64,
        min: f64,
        max: f64,
    },

    #[error("target rate {target_bpp} bpp is unreachable (closest {closest_bpp} bpp)")]
    UnreachableRate { target_bpp: f64, closest_bpp: f64 },

    #[error("image too small for SSIM: {width}x{height} (need at least 11x11)")]
    TooSmall { width: usize, height: usize },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("image format error: {0}")]
    ImageFormat(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
