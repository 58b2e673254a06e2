use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("stump region is empty for this configuration")]
    EmptyStump,

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("crown pixel ({x}, {y}) lies outside the valid gap region")]
    CrownOutsideGap { x: usize, y: usize },

    #[error("no valid pixels to evaluate")]
    EmptyRegion,

    #[error("need at least {needed} valid pixels, found {found}")]
    TooFewPixels { needed: usize, found: usize },

    #[error("bin count mismatch: {0} vs {1}")]
    BinCountMismatch(usize, usize),

    #[error("empty input")]
    EmptyInput,

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("raster {path} is {found:?} but the case is {expected:?}")]
    CaseDimensionMismatch {
        path: PathBuf,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("malformed metadata: {0}")]
    Metadata(String),

    #[error("tensor shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at step {step}: {term} = {value}")]
    Diverged {
        step: usize,
        term: &'static str,
        value: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    /// Stable short code for machine-readable error reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "E_CONFIG",
            Error::EmptyStump => "E_EMPTY_STUMP",
            Error::InvalidRaster(_) => "E_RASTER",
            Error::DimensionMismatch { .. } => "E_DIMS",
            Error::CrownOutsideGap { .. } => "E_CROWN_OUTSIDE_GAP",
            Error::EmptyRegion => "E_EMPTY_REGION",
            Error::TooFewPixels { .. } => "E_TOO_FEW_PIXELS",
            Error::BinCountMismatch(..) => "E_BINS",
            Error::EmptyInput => "E_EMPTY_INPUT",
            Error::BadMagic { .. } => "E_BAD_MAGIC",
            Error::Truncated { .. } => "E_TRUNCATED",
            Error::CaseDimensionMismatch { .. } => "E_CASE_DIMS",
            Error::Metadata(_) => "E_META",
            Error::Shape(_) => "E_SHAPE",
            Error::Diverged { .. } => "E_DIVERGED",
            Error::Checkpoint(_) => "E_CHECKPOINT",
            Error::Io { .. } => "E_IO",
            Error::Json(_) => "E_JSON",
        }
    }
}
