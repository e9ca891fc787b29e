use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("resampling needs both classes present (class 0: {count0}, class 1: {count1})")]
    UnbalancedDegenerate { count0: usize, count1: usize },

    #[error("class {theta} has no signal mass")]
    DegenerateConditional { theta: u8 },

    #[error("both ball-probability estimates are zero at radius {radius}; use a larger radius or more samples")]
    EmptyBall { radius: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("bad IDX magic number {magic:#010x}")]
    IdxBadMagic { magic: u32 },

    #[error("truncated IDX payload: expected {expected} bytes, found {found}")]
    IdxTruncated { expected: usize, found: usize },

    #[error("IDX dimensions overflow: {dims:?}")]
    IdxDimOverflow { dims: Vec<u32> },

    #[error("IDX file has {extra} trailing bytes after the payload")]
    IdxTrailingBytes { extra: usize },

    #[error("label {value} out of range (expected 0..={max})")]
    LabelRange { value: u8, max: u8 },

    #[error("class {class} is empty after filtering")]
    EmptyClass { class: u8 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or missing input files.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::IdxBadMagic { .. }
                | Error::IdxTruncated { .. }
                | Error::IdxDimOverflow { .. }
                | Error::IdxTrailingBytes { .. }
                | Error::LabelRange { .. }
                | Error::EmptyClass { .. }
                | Error::Io { .. }
                | Error::Csv(_)
        )
    }

    /// True for failures of a numerical routine rather than of the inputs.
    pub fn is_numeric_error(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::EmptyBall { .. } | Error::DegenerateConditional { .. }
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
