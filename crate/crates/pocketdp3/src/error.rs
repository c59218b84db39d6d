//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between arrays / parameters.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration value (bad range, unknown key, inconsistent dims).
    #[error("configuration error: {0}")]
    Config(String),

    /// A computation produced a non-finite value.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Environment fault during a rollout.
    #[error("environment error at step {step}: {msg}")]
    Env { step: usize, msg: String },

    /// Checkpoint file does not start with the expected magic bytes.
    #[error("checkpoint magic mismatch: {0}")]
    CkptMagic(String),

    /// Checkpoint format version is not supported.
    #[error("checkpoint version mismatch: got {got}, expected {expected}")]
    CkptVersion { got: u32, expected: u32 },

    /// Stored config hash does not match the recomputed / expected hash.
    #[error("checkpoint config hash mismatch: {0}")]
    CkptHash(String),

    /// Malformed or truncated artifact file.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI. Error classes get distinct codes so
    /// scripts can tell them apart.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Shape(_) => 3,
            Error::NonFinite(_) => 4,
            Error::Format(_) => 5,
            Error::Env { .. } => 6,
            Error::CkptMagic(_) => 10,
            Error::CkptVersion { .. } => 11,
            Error::CkptHash(_) => 12,
            Error::Io(_) => 13,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
