//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MaflError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MaflError {
    /// Two operands (or a layer and its input) disagree on shape.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    /// An object was used before it reached the required state
    /// (for example `backward` without a recorded forward pass).
    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite value encountered in {0}")]
    Numeric(String),

    /// A training invariant was broken, e.g. a frozen parameter was handed to
    /// the optimizer or a frozen group's digest changed across a step.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// A metric is mathematically undefined for the given input
    /// (AP without positives, AUC on a single class, ...).
    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checksum mismatch for {path}: manifest says {expected}, file hashes to {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("inconsistent bundle: {0}")]
    Consistency(String),

    #[error("malformed labels row {row}: {reason}")]
    MalformedLabel { row: usize, reason: String },

    #[error("corrupt checkpoint {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl MaflError {
    pub(crate) fn dim(
        context: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        MaflError::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MaflError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        MaflError::Json {
            context: context.into(),
            source,
        }
    }
}
