//! Error type shared by all modules.

use thiserror::Error;

/// Errors produced by ensemble construction, preprocessing, classification
/// and testing.
#[derive(Debug, Error)]
pub enum HectError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("both classes must be present")]
    SingleClass,

    #[error("too few samples for stratified {folds}-fold split: minority class has {minority}")]
    TooFewSamples { folds: usize, minority: usize },

    #[error("degenerate ensemble: {0}")]
    DegenerateEnsemble(String),

    #[error("degenerate variance in feature '{0}'")]
    DegenerateVariance(String),

    #[error("insufficient trusted runs: {0}")]
    InsufficientTrusted(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("null distribution is empty")]
    EmptyNull,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid run '{id}': {reason}")]
    InvalidRun { id: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HectError>;
