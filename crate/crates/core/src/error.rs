use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // datamodel
    #[error("line {line}: missing field `{field}`")]
    MissingField { field: String, line: usize },
    #[error("line {line}: malformed record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: unknown sample id `{id}`")]
    UnknownSampleId { id: String, line: usize },
    #[error("invalid record: {0}")]
    Validation(String),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // backends
    #[error("backend `{backend}` unavailable: {reason}")]
    BackendUnavailable { backend: String, reason: String },
    #[error("backend `{backend}` protocol error: {reason}")]
    BackendProtocol { backend: String, reason: String },
    #[error("backend `{backend}` rejected credentials")]
    Authentication { backend: String },
    #[error("backend `{backend}` rate limited")]
    RateLimited { backend: String },

    // entity
    #[error("`{0}` is empty after normalization")]
    EmptyAfterNormalization(String),

    // semantic
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding has zero norm")]
    ZeroVector,

    // factual
    #[error("generated answer contains no sentences")]
    EmptyGeneration,

    // scoring
    #[error("invalid weight scheme `{name}`: {reason}")]
    InvalidScheme { name: String, reason: String },
    #[error("unknown weight scheme `{0}`")]
    UnknownScheme(String),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),

    // stats
    #[error("empty input")]
    EmptyInput,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("all paired differences equal a nonzero constant; t is undefined")]
    DegenerateDifferences,
    #[error("pooled standard deviation is zero")]
    ZeroPooledSd,
    #[error("only one stratum present")]
    SingleStratum,

    // harness
    #[error("RAG prompt configuration requires a nonempty context")]
    MissingContext,
    #[error("few-shot configuration expects {expected} examples, got {got}")]
    FewShotExamples { expected: usize, got: usize },

    // pipeline
    #[error("model result sets cover different samples: {0}")]
    MismatchedSampleSets(String),
    #[error("no data: {0}")]
    NoData(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether a model call that failed with this error may be retried.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            Error::BackendUnavailable { .. } | Error::RateLimited { .. }
        )
    }

    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::BackendUnavailable { .. }
                | Error::BackendProtocol { .. }
                | Error::Authentication { .. }
                | Error::RateLimited { .. }
        )
    }

    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MissingField { .. }
                | Error::MalformedLine { .. }
                | Error::DuplicateId { .. }
                | Error::UnknownSampleId { .. }
                | Error::Validation(_)
                | Error::InvalidScheme { .. }
                | Error::UnknownScheme(_)
                | Error::InvalidThresholds(_)
                | Error::MismatchedSampleSets(_)
                | Error::Config(_)
                | Error::MissingContext
                | Error::FewShotExamples { .. }
        )
    }
}
