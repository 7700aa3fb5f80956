use std::path::Path;

use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<protoattn::Error> for CliError {
    fn from(e: protoattn::Error) -> Self {
        use protoattn::Error as E;
        let msg = e.to_string();
        match e {
            E::Io(_)
            | E::BadMagic { .. }
            | E::UnsupportedVersion(_)
            | E::Truncated(_)
            | E::DimensionOverflow(_)
            | E::Malformed(_) => CliError::Io(msg),
            E::NonFinite(_) | E::ZeroMass(_) | E::EmptyInstance | E::EmptyBackground | E::CountOverflow(_) => {
                CliError::Numeric(msg)
            }
            E::EmptyInput(_)
            | E::DimensionMismatch { .. }
            | E::InvalidParameter(_)
            | E::NonMonotonicIndex { .. }
            | E::Unsupported(_)
            | E::FrameCountMismatch { .. } => CliError::Usage(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(format!("json: {e}"))
    }
}
