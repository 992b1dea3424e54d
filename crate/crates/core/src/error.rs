use std::path::PathBuf;

use thiserror::Error;

/// One rejected CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based line number in the source file (the header is line 1).
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("schema column `{0}` missing from header")]
    MissingColumn(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("{} invalid row(s); first: {}", .0.len(), .0[0])]
    InvalidRows(Vec<RowError>),

    #[error("record `{id}` violates: {}", .violations.join("; "))]
    InvalidRecord { id: String, violations: Vec<String> },

    #[error("size mismatch: expected {expected} elements, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("unsupported sidecar field {field}: {value}")]
    UnsupportedFormat { field: &'static str, value: String },

    #[error("empty vote list")]
    EmptyVotes,

    #[error("vote {0} is outside the scoring domain")]
    VoteOutOfDomain(i64),

    #[error("record `{0}` has no model scores")]
    NoModelScores(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate contingency table ({rows}x{cols} after pruning)")]
    DegenerateTable { rows: usize, cols: usize },

    #[error("need at least {min} samples, got {n}")]
    TooFewSamples { n: usize, min: usize },

    #[error("zero-variance input: kernel bandwidth undefined")]
    ZeroVariance,

    #[error("non-finite input value")]
    NonFiniteInput,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("empty data")]
    EmptyData,

    #[error("latent column {0} has zero variance")]
    ZeroVarianceLatent(usize),

    #[error("no latent assignment available")]
    NoAssignment,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad input (exit code 1) rather than a
    /// failure while computing (exit code 2).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Divergence { .. } | Error::Io { .. } => false,
            Error::Csv(e) => !e.is_io_error(),
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
