//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite activations in layer {layer}")]
    NonFinite { layer: usize },

    #[error("no teacher's average noise response reaches the relevance threshold for the queried classes")]
    NoCompetentTeacher,

    #[error(
        "client {client_id} has no class under the sample threshold {threshold}; \
         raise `sample_threshold` so under-represented classes become eligible"
    )]
    NoEligibleClass { client_id: usize, threshold: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint decode failed: {0}")]
    Checkpoint(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("csv error: {0}")]
    Csv(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand for a [`Error::Shape`] with formatted operands.
    pub fn shape(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
