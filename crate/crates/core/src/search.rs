//! End-to-end semantic search: encode a free-form query, retrieve top-k
//! mixed-type artifacts, optionally enrich each hit with its KNN-graph
//! neighborhood.
//!
//! Graph-enriched hits are annotations, not ranked results: they are
//! listed after the direct hits, grouped by the hit that discovered them,
//! and carry the similarity of the discovery edge rather than a fused
//! score.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::artifact::{ArtifactId, ArtifactType, Corpus, TypeTemplates};
use crate::embed::{encode_query, AdapterPair, BaseEncoder};
use crate::error::{PactError, Result};
use crate::index::VectorIndex;
use crate::knn::KnnGraph;

#[derive(Debug, Clone)]
pub struct SearchRequest {
    pub query: String,
    pub k: usize,
    pub type_filter: Option<BTreeSet<ArtifactType>>,
    pub enrich_hops: usize,
}

impl SearchRequest {
    pub fn new(query: impl Into<String>, k: usize) -> Self {
        Self {
            query: query.into(),
            k,
            type_filter: None,
            enrich_hops: 0,
        }
    }

    pub fn with_types(mut self, types: BTreeSet<ArtifactType>) -> Self {
        self.type_filter = Some(types);
        self
    }

    pub fn with_hops(mut self, hops: usize) -> Self {
        self.enrich_hops = hops;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Direct,
    GraphEdge { from: ArtifactId },
}

#[derive(Debug, Clone, Serialize)]
pub struct Hit {
    pub id: ArtifactId,
    #[serde(rename = "type")]
    pub ty: ArtifactType,
    pub snippet: String,
    pub score: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
    pub latency_ms: f64,
}

impl SearchResult {
    pub fn direct_hits(&self) -> impl Iterator<Item = &Hit> {
        self.hits
            .iter()
            .filter(|h| h.provenance == Provenance::Direct)
    }
}

/// Everything a search needs, shared immutably so concurrent searches are
/// free.
#[derive(Clone)]
pub struct SearchContext {
    pub index: Arc<VectorIndex>,
    pub adapters: Arc<AdapterPair>,
    pub encoder: Arc<BaseEncoder>,
    pub graph: Option<Arc<KnnGraph>>,
    /// Composed texts for snippets, when a corpus is on hand.
    pub summaries: Option<Arc<HashMap<ArtifactId, String>>>,
    /// Truncation applied to snippets in rendered output.
    pub snippet_chars: usize,
}

impl SearchContext {
    pub fn new(index: VectorIndex, adapters: AdapterPair, encoder: BaseEncoder) -> Self {
        Self {
            index: Arc::new(index),
            adapters: Arc::new(adapters),
            encoder: Arc::new(encoder),
            graph: None,
            summaries: None,
            snippet_chars: 120,
        }
    }

    pub fn with_graph(mut self, graph: KnnGraph) -> Self {
        self.graph = Some(Arc::new(graph));
        self
    }

    pub fn with_corpus(mut self, corpus: &Corpus, templates: &TypeTemplates) -> Result<Self> {
        self.summaries = Some(Arc::new(corpus.composed_texts(templates)?));
        Ok(self)
    }

    fn snippet(&self, id: &ArtifactId) -> String {
        let Some(summaries) = &self.summaries else {
            return String::new();
        };
        let Some(text) = summaries.get(id) else {
            return String::new();
        };
        if text.chars().count() <= self.snippet_chars {
            text.clone()
        } else {
            let mut s: String = text.chars().take(self.snippet_chars).collect();
            s.push_str("...");
            s
        }
    }

    /// Run a search: encode the query with the query adapter, rank against
    /// the index, then append graph neighborhoods of each direct hit when
    /// `enrich_hops > 0`. No artifact appears twice in the result.
    pub fn search(&self, req: &SearchRequest) -> Result<SearchResult> {
        let start = Instant::now();
        if req.k < 1 {
            return Err(PactError::InvalidArgument("k must be >= 1".into()));
        }
        if req.enrich_hops > 0 && self.graph.is_none() {
            return Err(PactError::GraphRequired);
        }
        let query = encode_query(&req.query, &self.encoder, &self.adapters)?;
        let k = req.k.min(self.index.len());
        let rerank = matches!(self.index.mode(), crate::index::IndexMode::Pq);
        let direct = self
            .index
            .search_top_k(&query, k, req.type_filter.as_ref(), rerank)?;

        let mut seen: HashSet<ArtifactId> = direct.iter().map(|h| h.id.clone()).collect();
        let mut hits: Vec<Hit> = direct
            .iter()
            .map(|h| Hit {
                id: h.id.clone(),
                ty: h.ty.clone(),
                snippet: self.snippet(&h.id),
                score: h.score,
                provenance: Provenance::Direct,
            })
            .collect();

        if req.enrich_hops > 0 {
            let graph = self.graph.as_ref().expect("checked above");
            for source in &direct {
                if !graph.contains(&source.id) {
                    continue;
                }
                // breadth-first out to enrich_hops, recording the edge by
                // which each artifact was discovered
                let mut frontier = vec![source.id.clone()];
                let mut local_seen: HashSet<ArtifactId> = HashSet::new();
                local_seen.insert(source.id.clone());
                for _ in 0..req.enrich_hops {
                    let mut next = Vec::new();
                    for node in &frontier {
                        for (neighbor, sim) in graph.neighbors(node, None)? {
                            if !local_seen.insert(neighbor.clone()) {
                                continue;
                            }
                            next.push(neighbor.clone());
                            if seen.insert(neighbor.clone()) {
                                let ty = graph
                                    .node_type(&neighbor)
                                    .cloned()
                                    .unwrap_or_else(|| ArtifactType::new("unknown"));
                                hits.push(Hit {
                                    id: neighbor.clone(),
                                    ty,
                                    snippet: self.snippet(&neighbor),
                                    score: sim,
                                    provenance: Provenance::GraphEdge {
                                        from: source.id.clone(),
                                    },
                                });
                            }
                        }
                    }
                    frontier = next;
                }
            }
        }

        Ok(SearchResult {
            hits,
            latency_ms: duration_ms(start.elapsed()),
        })
    }
}

fn duration_ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}
