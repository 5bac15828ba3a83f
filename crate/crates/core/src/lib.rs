//! Unified embedding space over heterogeneous enterprise artifacts:
//! contrastive adapter fine-tuning against a ground-truth link graph,
//! exact and product-quantized vector search, a KNN semantic graph,
//! free-form semantic search, candidate fetch-and-rank, a tool-using
//! agent loop, and the evaluation harnesses that tie them together.

pub mod agent;
pub mod artifact;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fetch;
pub mod index;
pub mod knn;
pub mod matrix;
pub mod search;
pub mod synth;
pub mod train;

pub use artifact::{
    compose_text, load_corpus, write_corpus, Artifact, ArtifactId, ArtifactType, Corpus,
    LinkEdge, LinkGraph, TypeTemplates,
};
pub use embed::{
    encode_context, encode_query, load_adapters, save_adapters, similarity, AdapterPair,
    BaseEncoder, Embedding,
};
pub use error::{PactError, Result};
pub use index::{load_index, save_index, ScoredHit, VectorIndex};
pub use knn::KnnGraph;
pub use search::{SearchContext, SearchRequest, SearchResult};
pub use train::{build_examples, info_nce_loss, loss_gradient, train, TrainConfig, TrainReport};
