use std::path::PathBuf;

use thiserror::Error;

/// Failures decoding the binary containers (epoch files and checkpoints).
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (this build reads {expected})")]
    Version { expected: u32, found: u32 },
    #[error("truncated payload while reading {0}")]
    Truncated(String),
    #[error("non-finite sample at channel {channel}, index {index}")]
    NonFiniteSample { channel: usize, index: usize },
    #[error("malformed container: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: {what} is not finite")]
    Divergence { step: usize, what: String },
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("sampling rate {0} Hz is not in the rate vocabulary")]
    UnknownRate(u32),
    #[error("channel id {id} out of range for vocabulary of {size}")]
    ChannelIdOutOfRange { id: usize, size: usize },
    #[error("duplicate channel {name:?} in dataset {dataset:?}")]
    DuplicateChannel { dataset: String, name: String },
    #[error("empty channel name in dataset {0:?}")]
    EmptyChannelName(String),
    #[error("channel intersection across datasets is empty")]
    EmptyIntersection,
    #[error(
        "input of {len} samples yields {features} feature positions after the conv stack \
         {conv}; at least {needed} are required"
    )]
    InputTooShort {
        len: usize,
        features: usize,
        needed: usize,
        conv: String,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("gradient check failed:\n{0}")]
    GradCheck(String),
    #[error("checkpoint set is empty")]
    EmptyEnsemble,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Format(#[from] FormatError),
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
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numbers blowing up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Divergence { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
