//! Crate-wide error type.

use thiserror::Error;

/// Errors reported by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix dimension does not match what the operation expects.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Normalization was asked for a vector with zero (or non-finite) norm.
    #[error("cannot normalize a zero-norm vector")]
    ZeroNorm,

    /// An embedding violated the unit-norm contract.
    #[error("embedding is not unit-norm (norm = {norm})")]
    NotUnitNorm { norm: f64 },

    /// An experience was offered to a buffer of the opposite role.
    #[error("experience with success={success} rejected by the {role} buffer")]
    RoleMismatch { success: bool, role: &'static str },

    /// Temporal weight queried with a negative age.
    #[error("temporal weight requires delta_t >= 0, got {delta_t}")]
    NegativeAge { delta_t: i64 },

    /// Retrieval asked for more entries than the buffer holds.
    #[error("top-k with k={k} exceeds buffer size {available}")]
    KExceedsBuffer { k: usize, available: usize },

    /// The contrastive loss needs at least one negative.
    #[error("InfoNCE requires at least one negative representation")]
    EmptyNegatives,

    /// Paired sequences of different lengths.
    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    /// A loss or gradient term evaluated to NaN or infinity.
    #[error("non-finite value in {term}")]
    NonFinite { term: &'static str },

    /// A snapshot or checkpoint file did not start with the expected magic bytes.
    #[error("bad magic in {file_kind} file")]
    BadMagic { file_kind: &'static str },

    /// A snapshot or checkpoint file has an unsupported format version.
    #[error("unsupported {file_kind} format version {found} (expected {expected})")]
    BadVersion {
        file_kind: &'static str,
        found: u32,
        expected: u32,
    },

    /// A snapshot or checkpoint file ended before all declared data was read.
    #[error("truncated {file_kind} file")]
    Truncated { file_kind: &'static str },

    /// The trailing CRC32 did not match the file contents.
    #[error("checksum mismatch in {file_kind} file (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch {
        file_kind: &'static str,
        stored: u32,
        computed: u32,
    },

    /// The scripted expert could not produce a successful demonstration.
    #[error("expert demonstration failed: {reason}")]
    ExpertFailed { reason: String },

    /// Configuration rejected during validation or parsing.
    #[error("invalid config: {0}")]
    Config(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
