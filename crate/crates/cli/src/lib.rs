//! Library face of the `frontdoor` binary: command implementations, config
//! resolution, file-format glue, and manifest writing.

pub mod commands;
pub mod config;
pub mod formats;
pub mod manifest;

use frontdoor_core::CoreError;

/// Failure classes mapped onto process exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration (exit 2).
    Usage(String),
    /// A check did not hold or inputs were semantically invalid (exit 1).
    Validation(String),
    /// Missing artifact, malformed file, or checksum error (exit 3).
    IoFormat(String),
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(_)
            | CoreError::Format(_)
            | CoreError::FormatVersionMismatch { .. }
            | CoreError::ChecksumMismatch { .. } => Failure::IoFormat(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Validation(_) => 1,
            Failure::IoFormat(_) => 3,
        }
    }
}

pub type CmdResult = Result<(), Failure>;
