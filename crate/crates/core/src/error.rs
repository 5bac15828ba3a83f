//! Crate-wide error type.

use thiserror::Error;

/// Every fallible operation in the crate returns this error.
#[derive(Debug, Error)]
pub enum PactError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("edge references unknown artifact `{id}`")]
    DanglingEdge { id: String },

    #[error("artifact type `{ty}` has no text template")]
    TypeNotInTemplate { ty: String },

    #[error("cannot encode empty text")]
    EmptyText,

    #[error("no precomputed vector for key `{key}`")]
    MissingVector { key: String },

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("not enough same-type negatives for edge {src} -> {dst}: need {needed}, have {available}")]
    NotEnoughNegatives {
        src: String,
        dst: String,
        needed: usize,
        available: usize,
    },

    #[error("non-finite similarity score")]
    NonFiniteScore,

    #[error("training diverged: mean loss is not finite at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("subspace count {m} does not divide dimension {dim}")]
    BadSubspaceCount { m: usize, dim: usize },

    #[error("product quantization needs at least {needed} vectors, index has {available}")]
    TooFewVectors { needed: usize, available: usize },

    #[error("index is empty")]
    EmptyIndex,

    #[error("incompatible index file: {0}")]
    IncompatibleIndex(String),

    #[error("exact vectors were dropped from this index; rerank is unavailable")]
    ExactVectorsDropped,

    #[error("k = {k} must be smaller than the node count {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("unknown node `{id}`")]
    UnknownNode { id: String },

    #[error("enrichment hops > 0 but no KNN graph was supplied")]
    GraphRequired,

    #[error("ranker violation: {0}")]
    RankerViolation(String),

    #[error("benchmark has {items} items but {answers} answers were given")]
    BenchShapeMismatch { items: usize, answers: usize },

    #[error("synthetic spec infeasible: {0}")]
    SpecInfeasible(String),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("completion transport error: {0}")]
    Completion(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PactError>;
