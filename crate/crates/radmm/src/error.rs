use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("graph is disconnected: node {0} is unreachable from node 0")]
    DisconnectedGraph(usize),

    #[error("invalid edge ({0}, {1}): {2}")]
    InvalidEdge(usize, usize, &'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("inner solver exceeded {0} iterations before reaching tolerance")]
    MaxIterationsExceeded(usize),

    #[error("non-finite value encountered in {0}")]
    NonfiniteValue(&'static str),

    #[error("even update requires caches from the preceding odd iteration")]
    MissingCache,

    #[error("penalty schedule decreases at node {node}, pair {pair}")]
    ScheduleViolation { node: usize, pair: usize },

    #[error("CSV parse error at row {row}: {message}")]
    ParseError { row: usize, message: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("no rows remain after filtering missing values")]
    EmptyAfterFiltering,

    #[error("label value {0:?} has no mapping to -1/+1")]
    UnmappableLabel(String),

    #[error("too few samples: need at least {needed}, have {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("infeasible target: tau must exceed every Delta_i(k)")]
    InfeasibleTarget,

    #[error("infeasible privacy level: noise too large for the accuracy target")]
    InfeasiblePrivacy,

    #[error("non-finite input in {0}")]
    NonfiniteInput(&'static str),

    #[error("configuration error at {field}: {message}")]
    ConfigError { field: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
