use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated payload: {0}")]
    Truncated(&'static str),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(&'static str),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("empty instance: mask has no foreground pixels")]
    EmptyInstance,

    #[error("empty background: no background pixels available around the instance")]
    EmptyBackground,

    #[error("frame index {index} is not greater than the last stored index {last}")]
    NonMonotonicIndex { index: u64, last: u64 },

    #[error("prototype {0} has zero assignment mass")]
    ZeroMass(usize),

    #[error("operation count overflow in {0}")]
    CountOverflow(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("frame count mismatch: predictions have {pred}, ground truth has {gt}")]
    FrameCountMismatch { pred: usize, gt: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                actual,
            })
        }
    }
}
