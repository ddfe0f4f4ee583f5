use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported or malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input too small: {0}")]
    Size(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("transmission {value} below floor {floor} at pixel {index}")]
    DegenerateTransmission { index: usize, value: f64, floor: f64 },

    #[error("atmospheric light channel {channel} is not positive ({value})")]
    DegenerateAirlight { channel: usize, value: f64 },

    #[error("batch too small for batch norm statistics: {0} samples per channel")]
    Batch(usize),

    #[error("training diverged at epoch {epoch}, batch {batch}: {what} is not finite")]
    Divergence {
        epoch: usize,
        batch: usize,
        what: String,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Format { .. } => 4,
            Error::Shape(_) | Error::Size(_) => 5,
            Error::Argument(_) | Error::Config(_) => 6,
            Error::DegenerateTransmission { .. }
            | Error::DegenerateAirlight { .. }
            | Error::Batch(_) => 7,
            Error::Divergence { .. } => 8,
        }
    }
}
