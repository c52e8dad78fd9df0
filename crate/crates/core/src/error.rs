//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by image I/O, preprocessing kernels, and the network.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// File did not start with the `P5` magic number.
    #[error("unsupported magic number (expected binary PGM `P5`)")]
    UnsupportedMagic,

    /// Header present but unparseable (missing fields, bad maxval, ...).
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),

    /// Header promised more sample bytes than the file contains.
    #[error("truncated PGM payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    /// An intensity fell outside the nominal [0, 1] range.
    #[error("intensity {0} outside [0, 1]")]
    IntensityOutOfRange(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation that needs at least one set mask pixel got none.
    #[error("empty region: {0}")]
    EmptyRegion(String),

    /// Histogram mass concentrated in fewer bins than the operation needs.
    #[error("degenerate histogram: {0}")]
    DegenerateHistogram(String),

    /// Log-domain bias estimation requires positive intensities inside the mask.
    #[error("non-positive intensity {value} inside mask at pixel ({x}, {y})")]
    NonPositiveIntensity { x: usize, y: usize, value: f64 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
