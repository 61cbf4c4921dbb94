use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("invalid input `{field}`: {reason}")]
    InvalidInput { field: &'static str, reason: String },

    #[error(
        "no bucket count fits {frames} frames into sizes {frame_range:?} and {tokens} audio tokens into sizes {audio_range:?}"
    )]
    BucketingInfeasible {
        frames: usize,
        tokens: usize,
        frame_range: (usize, usize),
        audio_range: (usize, usize),
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("bucket count mismatch: video has {video} buckets, audio has {audio}")]
    BucketCountMismatch { video: usize, audio: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error(
        "no segmentation of {frames} frames and {tokens} audio tokens with frame chunks in {frame_bounds:?} and audio chunks in {audio_bounds:?}"
    )]
    ChunkingInfeasible {
        frames: usize,
        tokens: usize,
        frame_bounds: (usize, usize),
        audio_bounds: (usize, usize),
    },

    #[error(
        "segmentation is feasible but no admissible path stays inside the DP band (half-width {band_width:.3}); increase the band ratio or minimum window"
    )]
    BandInfeasible { band_width: f64 },

    #[error("every feasible segmentation contains a chunk with no valid frame-audio pairs")]
    NoEvidence,

    #[error("brute-force oracle limited to {max_frames} frames and {max_tokens} tokens, got {frames} and {tokens}")]
    SizeGuard {
        frames: usize,
        tokens: usize,
        max_frames: usize,
        max_tokens: usize,
    },

    #[error("malformed chunking: {0}")]
    Structural(String),

    #[error("bad magic: expected `ORTC`, found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported container version {found:?}, expected `0001`")]
    VersionMismatch { found: String },

    #[error("truncated {section}: expected {expected} bytes, found {found}")]
    Truncated {
        section: &'static str,
        expected: u64,
        found: u64,
    },

    #[error("{found} trailing bytes after audio payload")]
    TrailingBytes { found: u64 },

    #[error("container field `{field}` violates invariant: {reason}")]
    InvariantViolation { field: &'static str, reason: String },

    #[error("malformed container header: {0}")]
    Header(#[source] serde_json::Error),

    #[error(
        "constant-budget search missed target {target:.4} after {iterations} iterations; achieved ratios [{}]",
        achieved.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(", ")
    )]
    BudgetSearch {
        target: f64,
        iterations: usize,
        achieved: Vec<f64>,
    },

    #[error("unknown export format `{0}`")]
    UnknownFormat(String),

    #[error("internal invariant failed: {0}")]
    Internal(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn input(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            field,
            reason: reason.into(),
        }
    }

    /// Broad classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) => ErrorKind::Io,
            Error::Internal(_) => ErrorKind::Internal,
            Error::BadMagic { .. }
            | Error::VersionMismatch { .. }
            | Error::Truncated { .. }
            | Error::TrailingBytes { .. }
            | Error::InvariantViolation { .. }
            | Error::Header(_) => ErrorKind::Format,
            _ => ErrorKind::Config,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Format,
    Io,
    Internal,
}
