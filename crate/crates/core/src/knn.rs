//! Undirected KNN graph over artifact embeddings.
//!
//! An edge {u, v} exists iff one endpoint is in the other's top-k most
//! similar nodes (union rule), so min degree >= k whenever the graph has
//! more than k nodes. Similarity is stored once per edge. Immutable after
//! build.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::{ArtifactId, ArtifactType};
use crate::embed::dot;
use crate::error::{PactError, Result};
use crate::index::VectorIndex;

#[derive(Debug, Clone)]
pub struct KnnGraph {
    k: usize,
    nodes: Vec<(ArtifactId, ArtifactType)>,
    node_of: HashMap<ArtifactId, usize>,
    /// Unordered edge set keyed by (min_idx, max_idx).
    edges: BTreeMap<(usize, usize), f64>,
    /// Per-node incident list sorted by (similarity desc, id asc).
    adjacency: Vec<Vec<(usize, f64)>>,
}

/// Closure returned by [`KnnGraph::expand`]: nodes in BFS discovery order
/// plus the edges induced among them.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnSubgraph {
    pub nodes: Vec<ArtifactId>,
    pub edges: Vec<(ArtifactId, ArtifactId, f64)>,
}

impl KnnGraph {
    /// Link every node to its k most similar other nodes, by full pairwise
    /// dot products. Deterministic given the index.
    pub fn build(index: &VectorIndex, k: usize) -> Result<Self> {
        let n = index.len();
        if k < 1 || k >= n {
            return Err(PactError::KTooLarge { k, n });
        }
        let entries = index.entries();
        let mut edges: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for u in 0..n {
            let mut scored: Vec<(usize, f64)> = (0..n)
                .filter(|&v| v != u)
                .map(|v| (v, dot(&entries[u].vector, &entries[v].vector)))
                .collect();
            scored.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| entries[a.0].id.cmp(&entries[b.0].id))
            });
            for &(v, s) in scored.iter().take(k) {
                let key = (u.min(v), u.max(v));
                edges.entry(key).or_insert(s);
            }
        }
        let nodes: Vec<(ArtifactId, ArtifactType)> = entries
            .iter()
            .map(|e| (e.id.clone(), e.ty.clone()))
            .collect();
        Ok(Self::assemble(k, nodes, edges))
    }

    fn assemble(
        k: usize,
        nodes: Vec<(ArtifactId, ArtifactType)>,
        edges: BTreeMap<(usize, usize), f64>,
    ) -> Self {
        let node_of = nodes
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.clone(), i))
            .collect();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (&(u, v), &s) in &edges {
            adjacency[u].push((v, s));
            adjacency[v].push((u, s));
        }
        for (u, list) in adjacency.iter_mut().enumerate() {
            let _ = u;
            list.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| nodes[a.0].0.cmp(&nodes[b.0].0))
            });
        }
        Self {
            k,
            nodes,
            node_of,
            edges,
            adjacency,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, id: &ArtifactId) -> bool {
        self.node_of.contains_key(id)
    }

    pub fn degree(&self, id: &ArtifactId) -> Option<usize> {
        self.node_of.get(id).map(|&i| self.adjacency[i].len())
    }

    /// Edge set as (id, id, similarity), ascending by node index pair.
    pub fn edges(&self) -> impl Iterator<Item = (&ArtifactId, &ArtifactId, f64)> {
        self.edges
            .iter()
            .map(move |(&(u, v), &s)| (&self.nodes[u].0, &self.nodes[v].0, s))
    }

    /// Direct neighbors of `id`, sorted by similarity descending with id
    /// tie-break, optionally restricted by type.
    pub fn neighbors(
        &self,
        id: &ArtifactId,
        type_filter: Option<&BTreeSet<ArtifactType>>,
    ) -> Result<Vec<(ArtifactId, f64)>> {
        let &idx = self.node_of.get(id).ok_or_else(|| PactError::UnknownNode {
            id: id.as_str().to_string(),
        })?;
        Ok(self.adjacency[idx]
            .iter()
            .filter(|(v, _)| {
                type_filter.is_none_or(|set| set.contains(&self.nodes[*v].1))
            })
            .map(|&(v, s)| (self.nodes[v].0.clone(), s))
            .collect())
    }

    pub fn node_type(&self, id: &ArtifactId) -> Option<&ArtifactType> {
        self.node_of.get(id).map(|&i| &self.nodes[i].1)
    }

    /// Breadth-first closure of `seeds` out to `hops` hops; `hops = 0`
    /// returns the seeds only. The subgraph keeps the edges induced on the
    /// visited set.
    pub fn expand(&self, seeds: &[ArtifactId], hops: usize) -> Result<KnnSubgraph> {
        let mut visited: BTreeSet<usize> = BTreeSet::new();
        let mut order: Vec<usize> = Vec::new();
        let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
        for seed in seeds {
            let &idx = self.node_of.get(seed).ok_or_else(|| PactError::UnknownNode {
                id: seed.as_str().to_string(),
            })?;
            if visited.insert(idx) {
                order.push(idx);
                queue.push_back((idx, 0));
            }
        }
        while let Some((u, depth)) = queue.pop_front() {
            if depth == hops {
                continue;
            }
            for &(v, _) in &self.adjacency[u] {
                if visited.insert(v) {
                    order.push(v);
                    queue.push_back((v, depth + 1));
                }
            }
        }
        let nodes: Vec<ArtifactId> = order.iter().map(|&i| self.nodes[i].0.clone()).collect();
        let edges: Vec<(ArtifactId, ArtifactId, f64)> = self
            .edges
            .iter()
            .filter(|(&(u, v), _)| visited.contains(&u) && visited.contains(&v))
            .map(|(&(u, v), &s)| (self.nodes[u].0.clone(), self.nodes[v].0.clone(), s))
            .collect();
        Ok(KnnSubgraph { nodes, edges })
    }
}

#[derive(Serialize, Deserialize)]
struct GraphHeader {
    k: usize,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct GraphEdgeLine {
    u: String,
    v: String,
    s: f64,
}

/// Write the graph as JSONL: a `{"k","n"}` header line, then one
/// `{"u","v","s"}` line per edge in ascending index order.
pub fn save_knn_graph(graph: &KnnGraph, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    writeln!(
        out,
        "{}",
        serde_json::to_string(&GraphHeader {
            k: graph.k,
            n: graph.node_count(),
        })?
    )?;
    for (u, v, s) in graph.edges() {
        writeln!(
            out,
            "{}",
            serde_json::to_string(&GraphEdgeLine {
                u: u.as_str().to_string(),
                v: v.as_str().to_string(),
                s,
            })?
        )?;
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Reload a graph file. Node types are re-attached from the index the
/// graph was built over; every edge endpoint must exist there.
pub fn load_knn_graph(path: impl AsRef<Path>, index: &VectorIndex) -> Result<KnnGraph> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let (_, header_line) = lines.next().ok_or(PactError::Parse {
        line: 1,
        message: "empty graph file".into(),
    })?;
    let header: GraphHeader =
        serde_json::from_str(&header_line?).map_err(|e| PactError::Parse {
            line: 1,
            message: e.to_string(),
        })?;

    let nodes: Vec<(ArtifactId, ArtifactType)> = index
        .entries()
        .iter()
        .map(|e| (e.id.clone(), e.ty.clone()))
        .collect();
    if nodes.len() != header.n {
        return Err(PactError::IncompatibleIndex(format!(
            "graph has {} nodes but index has {}",
            header.n,
            nodes.len()
        )));
    }
    let node_of: HashMap<ArtifactId, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.clone(), i))
        .collect();

    let mut edges = BTreeMap::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: GraphEdgeLine = serde_json::from_str(&line).map_err(|e| PactError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let u = lookup(&node_of, &parsed.u)?;
        let v = lookup(&node_of, &parsed.v)?;
        edges.insert((u.min(v), u.max(v)), parsed.s);
    }
    Ok(KnnGraph::assemble(header.k, nodes, edges))
}

fn lookup(node_of: &HashMap<ArtifactId, usize>, raw: &str) -> Result<usize> {
    let id = ArtifactId::new(raw)?;
    node_of
        .get(&id)
        .copied()
        .ok_or_else(|| PactError::UnknownNode {
            id: raw.to_string(),
        })
}
