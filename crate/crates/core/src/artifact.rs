//! Artifacts, the ground-truth link graph, per-type text composition, and
//! corpus file I/O.
//!
//! A corpus file is JSONL: the first line is a header object naming the
//! closed set of artifact types, every following line is either an artifact
//! or an edge. Everything is immutable after load.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PactError, Result};

/// Opaque artifact identifier, unique within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArtifactId(String);

impl ArtifactId {
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.is_empty() {
            return Err(PactError::InvalidArgument("artifact id is empty".into()));
        }
        if value.chars().any(char::is_whitespace) {
            return Err(PactError::InvalidArgument(format!(
                "artifact id `{value}` contains whitespace"
            )));
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ArtifactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Artifact type name, drawn from the corpus header's closed set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArtifactType(String);

impl ArtifactType {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ArtifactType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One typed enterprise entity: the node unit of the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub id: ArtifactId,
    #[serde(rename = "type")]
    pub ty: ArtifactType,
    /// Ordered `(field_name, text)` pairs.
    pub fields: Vec<(String, String)>,
}

impl Artifact {
    /// Value of the first non-empty field, used by name-based heuristics.
    pub fn name_text(&self) -> &str {
        self.fields
            .iter()
            .find(|(_, text)| !text.is_empty())
            .map(|(_, text)| text.as_str())
            .unwrap_or("")
    }
}

/// Directed typed edge between two artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkEdge {
    pub src: ArtifactId,
    pub dst: ArtifactId,
    pub relation: String,
}

/// Ground-truth links viewed as a knowledge graph.
///
/// Edges are stored directed; adjacency queries expose both directions
/// because graph enrichment and negative filtering are direction-agnostic.
#[derive(Debug, Clone, Default)]
pub struct LinkGraph {
    edges: Vec<LinkEdge>,
    out_adj: HashMap<ArtifactId, Vec<usize>>,
    in_adj: HashMap<ArtifactId, Vec<usize>>,
    linked: HashSet<(ArtifactId, ArtifactId)>,
}

impl LinkGraph {
    pub fn new(edges: Vec<LinkEdge>) -> Result<Self> {
        let mut graph = LinkGraph::default();
        let mut seen = HashSet::new();
        for edge in edges {
            if edge.src == edge.dst {
                return Err(PactError::InvalidArgument(format!(
                    "self-loop edge on `{}`",
                    edge.src
                )));
            }
            if !seen.insert((edge.src.clone(), edge.dst.clone(), edge.relation.clone())) {
                return Err(PactError::InvalidArgument(format!(
                    "duplicate edge {} -> {} ({})",
                    edge.src, edge.dst, edge.relation
                )));
            }
            graph.push_edge(edge);
        }
        Ok(graph)
    }

    fn push_edge(&mut self, edge: LinkEdge) {
        let idx = self.edges.len();
        self.out_adj.entry(edge.src.clone()).or_default().push(idx);
        self.in_adj.entry(edge.dst.clone()).or_default().push(idx);
        self.linked.insert((edge.src.clone(), edge.dst.clone()));
        self.linked.insert((edge.dst.clone(), edge.src.clone()));
        self.edges.push(edge);
    }

    pub fn edges(&self) -> &[LinkEdge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Directed successors of `id`, in edge insertion order.
    pub fn out_neighbors(&self, id: &ArtifactId) -> impl Iterator<Item = &LinkEdge> {
        self.out_adj
            .get(id)
            .into_iter()
            .flatten()
            .map(|&i| &self.edges[i])
    }

    /// Neighbors in either direction, as `(neighbor, relation)` pairs.
    pub fn neighbors(&self, id: &ArtifactId) -> Vec<(&ArtifactId, &str)> {
        let mut out = Vec::new();
        for edge in self.out_neighbors(id) {
            out.push((&edge.dst, edge.relation.as_str()));
        }
        for &i in self.in_adj.get(id).into_iter().flatten() {
            let edge = &self.edges[i];
            out.push((&edge.src, edge.relation.as_str()));
        }
        out
    }

    /// True when any edge joins `a` and `b` in either direction.
    pub fn is_linked(&self, a: &ArtifactId, b: &ArtifactId) -> bool {
        self.linked.contains(&(a.clone(), b.clone()))
    }

    fn has_directed_edge(&self, src: &ArtifactId, dst: &ArtifactId) -> bool {
        self.out_neighbors(src).any(|e| &e.dst == dst)
    }

    /// Every ordered pair `(a, c)` with directed chains `a -> b -> c`,
    /// `a != c`, that is not already a direct edge. Deduplicated, in
    /// first-discovery order over the edge list.
    pub fn two_hop_pairs(&self) -> Vec<(ArtifactId, ArtifactId)> {
        let mut seen = HashSet::new();
        let mut pairs = Vec::new();
        for first in &self.edges {
            for second in self.out_neighbors(&first.dst) {
                let (a, c) = (&first.src, &second.dst);
                if a == c || self.has_directed_edge(a, c) {
                    continue;
                }
                if seen.insert((a.clone(), c.clone())) {
                    pairs.push((a.clone(), c.clone()));
                }
            }
        }
        pairs
    }
}

/// Per-type field order used to compose artifact text.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TypeTemplates {
    per_type: HashMap<ArtifactType, Vec<String>>,
}

impl TypeTemplates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, ty: ArtifactType, field_order: Vec<String>) {
        self.per_type.insert(ty, field_order);
    }

    pub fn field_order(&self, ty: &ArtifactType) -> Option<&[String]> {
        self.per_type.get(ty).map(Vec::as_slice)
    }

    /// Derive templates from a corpus: per type, field names in first-seen
    /// order across that type's artifacts.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut templates = TypeTemplates::new();
        for artifact in &corpus.artifacts {
            let order = templates
                .per_type
                .entry(artifact.ty.clone())
                .or_default();
            for (name, _) in &artifact.fields {
                if !order.iter().any(|n| n == name) {
                    order.push(name.clone());
                }
            }
        }
        templates
    }
}

/// Separator between composed fields. Fixed: embeddings depend on it.
pub const FIELD_SEPARATOR: &str = " | ";

/// Join the artifact's fields in template order, skipping empty values.
///
/// Pure: the same artifact and template always produce the same string.
pub fn compose_text(artifact: &Artifact, templates: &TypeTemplates) -> Result<String> {
    let order = templates
        .field_order(&artifact.ty)
        .ok_or_else(|| PactError::TypeNotInTemplate {
            ty: artifact.ty.as_str().to_string(),
        })?;
    let by_name: HashMap<&str, &str> = artifact
        .fields
        .iter()
        .map(|(name, text)| (name.as_str(), text.as_str()))
        .collect();
    let parts: Vec<&str> = order
        .iter()
        .filter_map(|name| by_name.get(name.as_str()).copied())
        .filter(|text| !text.is_empty())
        .collect();
    Ok(parts.join(FIELD_SEPARATOR))
}

/// A fully loaded corpus: typed artifacts plus their link graph.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub types: Vec<ArtifactType>,
    pub artifacts: Vec<Artifact>,
    pub graph: LinkGraph,
    by_id: HashMap<ArtifactId, usize>,
}

impl Corpus {
    pub fn new(
        types: Vec<ArtifactType>,
        artifacts: Vec<Artifact>,
        edges: Vec<LinkEdge>,
    ) -> Result<Self> {
        let mut by_id = HashMap::new();
        for (i, artifact) in artifacts.iter().enumerate() {
            if !types.contains(&artifact.ty) {
                return Err(PactError::InvalidArgument(format!(
                    "artifact `{}` has type `{}` not declared in the header",
                    artifact.id, artifact.ty
                )));
            }
            if artifact.fields.iter().all(|(_, text)| text.is_empty()) {
                return Err(PactError::InvalidArgument(format!(
                    "artifact `{}` has no non-empty text field",
                    artifact.id
                )));
            }
            if by_id.insert(artifact.id.clone(), i).is_some() {
                return Err(PactError::InvalidArgument(format!(
                    "duplicate artifact id `{}`",
                    artifact.id
                )));
            }
        }
        for edge in &edges {
            for endpoint in [&edge.src, &edge.dst] {
                if !by_id.contains_key(endpoint) {
                    return Err(PactError::DanglingEdge {
                        id: endpoint.as_str().to_string(),
                    });
                }
            }
        }
        let graph = LinkGraph::new(edges)?;
        Ok(Self {
            types,
            artifacts,
            graph,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.artifacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artifacts.is_empty()
    }

    pub fn get(&self, id: &ArtifactId) -> Option<&Artifact> {
        self.by_id.get(id).map(|&i| &self.artifacts[i])
    }

    pub fn artifacts_of_type<'a>(
        &'a self,
        ty: &'a ArtifactType,
    ) -> impl Iterator<Item = &'a Artifact> + 'a {
        self.artifacts.iter().filter(move |a| &a.ty == ty)
    }

    /// Composed text for every artifact, keyed by id, using `templates`.
    pub fn composed_texts(&self, templates: &TypeTemplates) -> Result<HashMap<ArtifactId, String>> {
        let mut out = HashMap::with_capacity(self.artifacts.len());
        for artifact in &self.artifacts {
            out.insert(artifact.id.clone(), compose_text(artifact, templates)?);
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    types: Vec<String>,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct EdgeLine {
    edge: EdgeBody,
}

#[derive(Serialize, Deserialize)]
struct EdgeBody {
    src: String,
    dst: String,
    relation: String,
}

#[derive(Serialize, Deserialize)]
struct ArtifactLine {
    id: String,
    #[serde(rename = "type")]
    ty: String,
    fields: Vec<(String, String)>,
}

pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// Parse a JSONL corpus file. Iteration order of artifacts and edges is the
/// file order; line numbers in errors are 1-based.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header_line) = lines.next().ok_or(PactError::Parse {
        line: 1,
        message: "empty corpus file".into(),
    })?;
    let header_line = header_line?;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| PactError::Parse {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.version != CORPUS_FORMAT_VERSION {
        return Err(PactError::Parse {
            line: 1,
            message: format!("unsupported corpus version {}", header.version),
        });
    }
    let types: Vec<ArtifactType> = header.types.into_iter().map(ArtifactType::new).collect();

    let mut artifacts = Vec::new();
    let mut edges = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| PactError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if value.get("edge").is_some() {
            let parsed: EdgeLine = serde_json::from_value(value).map_err(|e| PactError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            edges.push(LinkEdge {
                src: ArtifactId::new(parsed.edge.src).map_err(|e| PactError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?,
                dst: ArtifactId::new(parsed.edge.dst).map_err(|e| PactError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?,
                relation: parsed.edge.relation,
            });
        } else {
            let parsed: ArtifactLine =
                serde_json::from_value(value).map_err(|e| PactError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            artifacts.push(Artifact {
                id: ArtifactId::new(parsed.id).map_err(|e| PactError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?,
                ty: ArtifactType::new(parsed.ty),
                fields: parsed.fields,
            });
        }
    }
    Corpus::new(types, artifacts, edges)
}

/// Write a corpus in the canonical JSONL layout: header, artifacts in
/// order, then edges in order. `load_corpus` of the output reproduces the
/// input exactly.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    let header = Header {
        types: corpus.types.iter().map(|t| t.as_str().to_string()).collect(),
        version: CORPUS_FORMAT_VERSION,
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for artifact in &corpus.artifacts {
        let line = ArtifactLine {
            id: artifact.id.as_str().to_string(),
            ty: artifact.ty.as_str().to_string(),
            fields: artifact.fields.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    for edge in corpus.graph.edges() {
        let line = EdgeLine {
            edge: EdgeBody {
                src: edge.src.as_str().to_string(),
                dst: edge.dst.as_str().to_string(),
                relation: edge.relation.clone(),
            },
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn artifact(id: &str, ty: &str, fields: &[(&str, &str)]) -> Artifact {
        Artifact {
            id: ArtifactId::new(id).unwrap(),
            ty: ArtifactType::new(ty),
            fields: fields
                .iter()
                .map(|(n, t)| (n.to_string(), t.to_string()))
                .collect(),
        }
    }

    fn edge(src: &str, dst: &str, relation: &str) -> LinkEdge {
        LinkEdge {
            src: ArtifactId::new(src).unwrap(),
            dst: ArtifactId::new(dst).unwrap(),
            relation: relation.to_string(),
        }
    }

    fn three_type_corpus() -> Corpus {
        Corpus::new(
            vec![
                ArtifactType::new("code_path"),
                ArtifactType::new("oncall_team"),
                ArtifactType::new("product"),
            ],
            vec![
                artifact("file-a", "code_path", &[("path", "pay/route.cc")]),
                artifact(
                    "team-b",
                    "oncall_team",
                    &[("name", "payments-oncall"), ("charter", "owns payment flows")],
                ),
                artifact("prod-c", "product", &[("name", "wallet")]),
            ],
            vec![
                edge("file-a", "team-b", "owned_by"),
                edge("team-b", "prod-c", "supports"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn compose_joins_fields_with_separator() {
        let corpus = three_type_corpus();
        let templates = TypeTemplates::from_corpus(&corpus);
        let team = corpus.get(&ArtifactId::new("team-b").unwrap()).unwrap();
        assert_eq!(
            compose_text(team, &templates).unwrap(),
            "payments-oncall | owns payment flows"
        );
    }

    #[test]
    fn compose_skips_empty_fields() {
        let a = artifact("x-1", "doc", &[("name", "x"), ("desc", "")]);
        let mut templates = TypeTemplates::new();
        templates.set(
            ArtifactType::new("doc"),
            vec!["name".into(), "desc".into()],
        );
        assert_eq!(compose_text(&a, &templates).unwrap(), "x");
    }

    #[test]
    fn compose_unknown_type_errors() {
        let a = artifact("x-1", "doc", &[("name", "x")]);
        let templates = TypeTemplates::new();
        assert!(matches!(
            compose_text(&a, &templates),
            Err(PactError::TypeNotInTemplate { .. })
        ));
    }

    #[test]
    fn compose_is_pure() {
        let corpus = three_type_corpus();
        let templates = TypeTemplates::from_corpus(&corpus);
        let team = corpus.get(&ArtifactId::new("team-b").unwrap()).unwrap();
        assert_eq!(
            compose_text(team, &templates).unwrap(),
            compose_text(team, &templates).unwrap()
        );
    }

    #[test]
    fn two_hop_follows_directed_chains() {
        let corpus = three_type_corpus();
        let pairs = corpus.graph.two_hop_pairs();
        assert_eq!(
            pairs,
            vec![(
                ArtifactId::new("file-a").unwrap(),
                ArtifactId::new("prod-c").unwrap()
            )]
        );
    }

    #[test]
    fn two_hop_single_edge_is_empty() {
        let graph = LinkGraph::new(vec![edge("a", "b", "r")]).unwrap();
        assert!(graph.two_hop_pairs().is_empty());
    }

    #[test]
    fn two_hop_excludes_direct_edges() {
        // brute-force enumeration on the 3-node graph: the only 2-path
        // a->b->c is shadowed by the direct edge a->c
        let graph = LinkGraph::new(vec![
            edge("a", "b", "r"),
            edge("b", "c", "r"),
            edge("a", "c", "r"),
        ])
        .unwrap();
        assert!(graph.two_hop_pairs().is_empty());
    }

    #[test]
    fn two_hop_matches_brute_force_on_random_graph() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let ids: Vec<ArtifactId> = (0..30)
            .map(|i| ArtifactId::new(format!("n{i}")).unwrap())
            .collect();
        let mut edges = Vec::new();
        let mut seen = HashSet::new();
        for _ in 0..80 {
            let s = rng.gen_range(0..ids.len());
            let d = rng.gen_range(0..ids.len());
            if s != d && seen.insert((s, d)) {
                edges.push(LinkEdge {
                    src: ids[s].clone(),
                    dst: ids[d].clone(),
                    relation: "r".into(),
                });
            }
        }
        let graph = LinkGraph::new(edges.clone()).unwrap();
        let got: HashSet<_> = graph.two_hop_pairs().into_iter().collect();

        // independent double loop over the raw edge list
        let direct: HashSet<_> = edges.iter().map(|e| (e.src.clone(), e.dst.clone())).collect();
        let mut want = HashSet::new();
        for e1 in &edges {
            for e2 in &edges {
                if e1.dst == e2.src
                    && e1.src != e2.dst
                    && !direct.contains(&(e1.src.clone(), e2.dst.clone()))
                {
                    want.insert((e1.src.clone(), e2.dst.clone()));
                }
            }
        }
        assert_eq!(got, want);
        assert!(got.iter().all(|(a, c)| a != c));
    }

    #[test]
    fn corpus_roundtrip_is_exact() {
        let corpus = three_type_corpus();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&corpus, &path).unwrap();
        let reloaded = load_corpus(&path).unwrap();
        assert_eq!(reloaded.types, corpus.types);
        assert_eq!(reloaded.artifacts, corpus.artifacts);
        assert_eq!(reloaded.graph.edges(), corpus.graph.edges());
        // and the bytes themselves are stable
        write_corpus(&reloaded, dir.path().join("again.jsonl")).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(dir.path().join("again.jsonl")).unwrap()
        );
    }

    #[test]
    fn dangling_edge_is_rejected() {
        let err = Corpus::new(
            vec![ArtifactType::new("doc")],
            vec![artifact("a-1", "doc", &[("name", "a")])],
            vec![edge("a-1", "ghost", "r")],
        )
        .unwrap_err();
        assert!(matches!(err, PactError::DanglingEdge { .. }));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"types\":[\"doc\"],\"version\":1}\n{not json}\n",
        )
        .unwrap();
        match load_corpus(&path) {
            Err(PactError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn whitespace_id_is_rejected() {
        assert!(ArtifactId::new("has space").is_err());
        assert!(ArtifactId::new("").is_err());
    }
}
