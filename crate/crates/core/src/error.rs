//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Invalid configuration, dimensions, or arguments.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor or vector shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A loss or gradient became non-finite; training must halt.
    #[error("divergence: {0}")]
    Divergence(String),

    /// Checkpoint file problems, each case distinct and reported.
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),

    /// Oracle search exhausted its budget before reaching the target.
    #[error("unreachable within budget: {0}")]
    UnreachableWithinBudget(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Error, Debug)]
pub enum CheckpointError {
    #[error("cannot read checkpoint: {0}")]
    Unreadable(String),
    #[error("bad magic bytes (not a checkpoint file)")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("checksum mismatch (file corrupted)")]
    ChecksumMismatch,
    #[error("tensor shape mismatch against manifest: {0}")]
    ShapeMismatch(String),
    #[error("malformed header: {0}")]
    Malformed(String),
}
