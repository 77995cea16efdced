use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the alignment engine.
///
/// Variants are grouped so the CLI can map them onto its exit codes:
/// configuration/usage problems, data (file/container) problems, and
/// numerical failures inside estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown config key `{key}` in {path}")]
    UnknownConfigKey { key: String, path: PathBuf },

    #[error("invalid window schedule: {0}")]
    Schedule(String),

    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("{path}: dimension mismatch: {reason}")]
    DimensionMismatch { path: PathBuf, reason: String },

    #[error("{path}: truncated at byte offset {offset} while reading {what}")]
    Truncated {
        path: PathBuf,
        offset: u64,
        what: String,
    },

    #[error("{path}: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    #[error("{path}: invalid payload: {reason}")]
    InvalidPayload { path: PathBuf, reason: String },

    #[error("degenerate input for {op}: {reason}")]
    Degenerate { op: &'static str, reason: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn degenerate(op: &'static str, reason: impl Into<String>) -> Self {
        Error::Degenerate {
            op,
            reason: reason.into(),
        }
    }

    /// Exit-code class used by the CLI: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownConfigKey { .. } | Error::Schedule(_) => 1,
            Error::MalformedHeader { .. }
            | Error::DimensionMismatch { .. }
            | Error::Truncated { .. }
            | Error::Checksum { .. }
            | Error::InvalidPayload { .. }
            | Error::Io { .. } => 2,
            Error::Degenerate { .. } | Error::NonFinite(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
