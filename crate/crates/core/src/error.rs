//! Error type shared across the engine.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Two matrices (or a matrix and a vector) had incompatible shapes.
    #[error("shape mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// An operation that needs at least one operand received none.
    #[error("{op} requires at least one operand")]
    EmptyInput { op: &'static str },

    /// Naive LoRA averaging across clients with different ranks.
    #[error("dimension mismatch between heterogeneous ranks {ranks:?}: naive averaging requires a uniform rank")]
    RankMismatch { ranks: Vec<usize> },

    /// A configuration value violated its documented bound.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data failed a structural check.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A JSONL corpus line could not be parsed.
    #[error("jsonl line {line}: {message}")]
    Jsonl { line: usize, message: String },

    /// Local training could not run.
    #[error("training failed: {0}")]
    Training(String),

    /// A client aborted the federated round.
    #[error("client {client_id} failed: {source}")]
    ClientFailed {
        client_id: String,
        #[source]
        source: Box<Error>,
    },

    /// Checkpoint written by an incompatible format version.
    #[error("checkpoint version {found} is incompatible with supported version {expected}")]
    CheckpointVersion { expected: u32, found: u32 },

    /// Checkpoint file is damaged.
    #[error("checkpoint corrupted at byte offset {offset}: {message}")]
    CheckpointCorrupt { offset: u64, message: String },

    /// Checkpoint belongs to a different run configuration.
    #[error("checkpoint config hash {found} does not match current config hash {expected}")]
    CheckpointConfigMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
