//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input failed validation (shape, range, flag combination, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dimensions of two arguments do not line up.
    #[error("shape mismatch: expected {expected}, got {found}")]
    ShapeMismatch { expected: String, found: String },

    /// A matrix required to have full row rank does not.
    #[error("rank deficient: row rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// File does not start with the expected magic bytes.
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },

    /// File format version is not one this build can read.
    #[error("unsupported format version {found}, supported version {supported}")]
    VersionMismatch { found: u32, supported: u32 },

    /// Payload checksum does not match the stored checksum.
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    /// File ends before the declared content does.
    #[error("truncated file: {0}")]
    Truncated(String),

    /// A vector file record declares a different dimension than the first record.
    #[error("inconsistent dimension at record {record}: found {found}, expected {expected}")]
    InconsistentDimension {
        record: usize,
        found: usize,
        expected: usize,
    },

    /// A vector file record declares a non-positive dimension.
    #[error("vector record with non-positive dimension")]
    ZeroDimension,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(expected: impl Into<String>, found: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            found: found.into(),
        }
    }

    /// True for errors caused by files and streams rather than by arguments.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::BadMagic { .. }
                | Error::VersionMismatch { .. }
                | Error::ChecksumMismatch { .. }
                | Error::Truncated(_)
                | Error::InconsistentDimension { .. }
                | Error::ZeroDimension
        )
    }
}
