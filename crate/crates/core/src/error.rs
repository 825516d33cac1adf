use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("dimensions overflow: {0}")]
    DimensionOverflow(String),
    #[error("non-finite value in payload at index {0}")]
    NonFinite(usize),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("channel mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("tensor {height}x{width} too small for {levels} dyadic levels")]
    TooSmall {
        height: usize,
        width: usize,
        levels: u32,
    },
    #[error("odd dimension {height}x{width}")]
    OddDimension { height: usize, width: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing blob {0}")]
    MissingBlob(PathBuf),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no valid pixels to evaluate")]
    NoValidPixels,
    #[error("disparity has zero mean")]
    ZeroMeanDisparity,
    #[error("inverted range [{0}, {1}]")]
    RangeInverted(f32, f32),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
