//! Metrics and experiment harnesses: recall@k over held-out links, the
//! keyword match rates for agent answers, the out-of-domain generalization
//! guard, and the fetcher comparison glue.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, BufReader, Write as IoWrite};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{pact_tool, run_agent, AgentConfig, RulePolicy, ToolRegistry};
use crate::artifact::{ArtifactId, ArtifactType, Corpus, LinkEdge, TypeTemplates};
use crate::embed::{encode_query, tokenize, AdapterPair, BaseEncoder};
use crate::error::{PactError, Result};
use crate::index::VectorIndex;
use crate::search::SearchContext;
use crate::synth::{self, SyntheticSpec};
use crate::train::{split_edges, train_on_examples, TrainConfig};

/// Fraction of queries whose single ground-truth target appears in the
/// top k of its ranking.
pub fn recall_at_k(rankings: &[Vec<ArtifactId>], truths: &[ArtifactId], k: usize) -> Result<f64> {
    if rankings.len() != truths.len() {
        return Err(PactError::InvalidArgument(format!(
            "{} rankings vs {} truths",
            rankings.len(),
            truths.len()
        )));
    }
    if rankings.is_empty() {
        return Err(PactError::InvalidArgument("no queries".into()));
    }
    let hits = rankings
        .iter()
        .zip(truths.iter())
        .filter(|(ranking, truth)| ranking.iter().take(k).any(|id| id == *truth))
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// NDCG@10 for a single relevant item: `1 / log2(rank + 1)` when the
/// 1-based rank is at most 10, else 0.
pub fn ndcg_single_relevant(rank: Option<usize>) -> f64 {
    match rank {
        Some(r) if (1..=10).contains(&r) => 1.0 / ((r as f64) + 1.0).log2(),
        _ => 0.0,
    }
}

/// Question set with keyword ground truth.
#[derive(Debug, Clone)]
pub struct KeywordBenchmark {
    items: Vec<BenchItem>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchItem {
    pub question: String,
    pub keywords: Vec<String>,
}

impl KeywordBenchmark {
    pub fn new(items: Vec<(String, Vec<String>)>) -> Result<Self> {
        let items: Vec<BenchItem> = items
            .into_iter()
            .map(|(question, keywords)| BenchItem { question, keywords })
            .collect();
        for item in &items {
            if item.keywords.is_empty() {
                return Err(PactError::InvalidArgument(format!(
                    "benchmark item `{}` has no keywords",
                    item.question
                )));
            }
            if item.keywords.iter().any(|k| k != &k.to_lowercase()) {
                return Err(PactError::InvalidArgument(format!(
                    "keywords must be lowercase in `{}`",
                    item.question
                )));
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[BenchItem] {
        &self.items
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        let mut items = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let item: BenchItem = serde_json::from_str(&line).map_err(|e| PactError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            items.push((item.question, item.keywords));
        }
        Self::new(items)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        for item in &self.items {
            writeln!(out, "{}", serde_json::to_string(item)?)?;
        }
        std::fs::write(path.as_ref(), out)?;
        Ok(())
    }
}

/// Average and global keyword match rates over one answer per item.
/// Matching is case-insensitive substring.
pub fn match_rates(bench: &KeywordBenchmark, answers: &[String]) -> Result<(f64, f64)> {
    if answers.len() != bench.items.len() {
        return Err(PactError::BenchShapeMismatch {
            items: bench.items.len(),
            answers: answers.len(),
        });
    }
    let mut per_item_sum = 0.0;
    let mut matched_total = 0usize;
    let mut keyword_total = 0usize;
    for (item, answer) in bench.items.iter().zip(answers.iter()) {
        let haystack = answer.to_lowercase();
        let matched = item
            .keywords
            .iter()
            .filter(|k| haystack.contains(k.as_str()))
            .count();
        per_item_sum += matched as f64 / item.keywords.len() as f64;
        matched_total += matched;
        keyword_total += item.keywords.len();
    }
    let average = per_item_sum / bench.items.len() as f64;
    let global = matched_total as f64 / keyword_total as f64;
    Ok((average, global))
}

/// Per-query evaluation row shared by experiment reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRow {
    pub query: String,
    pub truth: String,
    /// 1-based rank of the truth, if retrieved at all.
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodRecall {
    pub method: String,
    pub recall_at: Vec<(usize, f64)>,
    pub raw: Vec<QueryRow>,
}

/// Fine-tuning efficacy on held-out links: heuristic baseline at
/// recall@1, identity adapters and fine-tuned adapters at recall@{1,5,10}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Experiment1Report {
    pub train_edges: usize,
    pub test_edges: usize,
    pub methods: Vec<MethodRecall>,
}

impl Experiment1Report {
    pub fn recall(&self, method: &str, k: usize) -> Option<f64> {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .and_then(|m| m.recall_at.iter().find(|(kk, _)| *kk == k))
            .map(|(_, r)| *r)
    }

    /// Plot-ready rows: `method,k,recall`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,k,recall\n");
        for method in &self.methods {
            for (k, recall) in &method.recall_at {
                out.push_str(&format!("{},{},{:.6}\n", method.method, k, recall));
            }
        }
        out
    }
}

/// Rank the candidates of `truth`'s type against an encoded query and
/// report the truth's 1-based rank within the top `max_k`.
fn rank_of_truth(
    index: &VectorIndex,
    query: &crate::embed::Embedding,
    truth: &ArtifactId,
    target_type: &ArtifactType,
    max_k: usize,
) -> Result<Option<usize>> {
    let filter: BTreeSet<ArtifactType> = [target_type.clone()].into();
    let hits = index.search_top_k(query, max_k, Some(&filter), false)?;
    Ok(hits.iter().position(|h| &h.id == truth).map(|p| p + 1))
}

/// Shared-token Jaccard over name fields, the non-ML baseline.
fn heuristic_rank(
    corpus: &Corpus,
    query_artifact: &ArtifactId,
    truth: &ArtifactId,
    target_type: &ArtifactType,
) -> Option<usize> {
    let query_tokens: HashSet<String> = tokenize(corpus.get(query_artifact)?.name_text())
        .into_iter()
        .collect();
    let mut scored: Vec<(f64, &ArtifactId)> = corpus
        .artifacts_of_type(target_type)
        .map(|candidate| {
            let tokens: HashSet<String> =
                tokenize(candidate.name_text()).into_iter().collect();
            let inter = query_tokens.intersection(&tokens).count() as f64;
            let union = (query_tokens.len() + tokens.len()) as f64 - inter;
            let jaccard = if union > 0.0 { inter / union } else { 0.0 };
            (jaccard, &candidate.id)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.1.cmp(b.1))
    });
    scored.iter().position(|(_, id)| *id == truth).map(|p| p + 1)
}

/// Run the fine-tuning efficacy experiment: split the direct edges with
/// the configured ratio, train on the train side (2-hop pairs included
/// come from the train graph only), and evaluate all three methods on the
/// held-out edges. The fine-tuned adapters come back with the report so
/// the same model can be checked by the generalization guard.
pub fn run_experiment1(
    corpus: &Corpus,
    cfg: &TrainConfig,
    enc: &BaseEncoder,
) -> Result<(Experiment1Report, AdapterPair)> {
    let templates = TypeTemplates::from_corpus(corpus);
    let (train_side, test_side) = split_edges(corpus.graph.edges(), cfg.split_ratio, cfg.seed);
    if test_side.is_empty() {
        return Err(PactError::InvalidArgument(
            "held-out split is empty; corpus too small".into(),
        ));
    }
    let train_graph = crate::artifact::LinkGraph::new(train_side.clone())?;
    let examples = crate::train::build_examples(corpus, &train_graph, cfg)?;
    let (tuned, _report) = train_on_examples(corpus, &examples, cfg, &templates, enc)?;
    let identity = AdapterPair::identity(enc.dim());

    let identity_index = VectorIndex::build_exact(corpus, &templates, enc, &identity)?;
    let tuned_index = VectorIndex::build_exact(corpus, &templates, enc, &tuned)?;

    let ks = [1usize, 5, 10];
    let mut heuristic_rows = Vec::new();
    let mut identity_rows = Vec::new();
    let mut tuned_rows = Vec::new();
    for edge in &test_side {
        let target_type = corpus
            .get(&edge.dst)
            .ok_or_else(|| PactError::UnknownNode {
                id: edge.dst.as_str().to_string(),
            })?
            .ty
            .clone();
        let query_text = crate::artifact::compose_text(
            corpus.get(&edge.src).expect("edge endpoints exist"),
            &templates,
        )?;
        let truth = edge.dst.as_str().to_string();

        heuristic_rows.push(QueryRow {
            query: edge.src.as_str().to_string(),
            truth: truth.clone(),
            rank: heuristic_rank(corpus, &edge.src, &edge.dst, &target_type),
        });
        let identity_query = encode_query(&query_text, enc, &identity)?;
        identity_rows.push(QueryRow {
            query: edge.src.as_str().to_string(),
            truth: truth.clone(),
            rank: rank_of_truth(&identity_index, &identity_query, &edge.dst, &target_type, 10)?,
        });
        let tuned_query = encode_query(&query_text, enc, &tuned)?;
        tuned_rows.push(QueryRow {
            query: edge.src.as_str().to_string(),
            truth,
            rank: rank_of_truth(&tuned_index, &tuned_query, &edge.dst, &target_type, 10)?,
        });
    }

    let recall_from_rows = |rows: &[QueryRow], ks: &[usize]| -> Vec<(usize, f64)> {
        ks.iter()
            .map(|&k| {
                let hits = rows
                    .iter()
                    .filter(|r| matches!(r.rank, Some(rank) if rank <= k))
                    .count();
                (k, hits as f64 / rows.len() as f64)
            })
            .collect()
    };

    let report = Experiment1Report {
        train_edges: train_side.len(),
        test_edges: test_side.len(),
        methods: vec![
            MethodRecall {
                method: "heuristic".into(),
                recall_at: recall_from_rows(&heuristic_rows, &[1]),
                raw: heuristic_rows,
            },
            MethodRecall {
                method: "identity".into(),
                recall_at: recall_from_rows(&identity_rows, &ks),
                raw: identity_rows,
            },
            MethodRecall {
                method: "fine_tuned".into(),
                recall_at: recall_from_rows(&tuned_rows, &ks),
                raw: tuned_rows,
            },
        ],
    };
    Ok((report, tuned))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuardSide {
    pub ndcg_at_10: f64,
    pub avg_relevant_top5: f64,
}

/// Out-of-domain guard: identity vs fine-tuned adapters on a task whose
/// vocabulary is disjoint from the training corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuardReport {
    pub queries: usize,
    pub identity: GuardSide,
    pub fine_tuned: GuardSide,
}

impl GuardReport {
    /// NDCG@10 drop caused by fine-tuning, in points on the 0-100 scale.
    pub fn ndcg_drop_points(&self) -> f64 {
        (self.identity.ndcg_at_10 - self.fine_tuned.ndcg_at_10) * 100.0
    }
}

/// Evaluate one adapter pair on every direct edge of a held-out corpus.
fn guard_side(
    corpus: &Corpus,
    templates: &TypeTemplates,
    enc: &BaseEncoder,
    adapters: &AdapterPair,
    max_queries: usize,
) -> Result<GuardSide> {
    let index = VectorIndex::build_exact(corpus, templates, enc, adapters)?;
    let mut ndcg_sum = 0.0;
    let mut top5_sum = 0.0;
    let edges: Vec<&LinkEdge> = corpus.graph.edges().iter().take(max_queries).collect();
    for edge in &edges {
        let target_type = corpus.get(&edge.dst).expect("validated").ty.clone();
        let query_text =
            crate::artifact::compose_text(corpus.get(&edge.src).expect("validated"), templates)?;
        let query = encode_query(&query_text, enc, adapters)?;
        let rank = rank_of_truth(&index, &query, &edge.dst, &target_type, 10)?;
        ndcg_sum += ndcg_single_relevant(rank);
        if matches!(rank, Some(r) if r <= 5) {
            top5_sum += 1.0;
        }
    }
    Ok(GuardSide {
        ndcg_at_10: ndcg_sum / edges.len() as f64,
        avg_relevant_top5: top5_sum / edges.len() as f64,
    })
}

/// Run the generalization guard on a disjoint-vocabulary task that the
/// adapters never saw.
pub fn run_generalization_guard(
    tuned: &AdapterPair,
    enc: &BaseEncoder,
    guard_spec: &SyntheticSpec,
    max_queries: usize,
) -> Result<GuardReport> {
    let bundle = synth::generate(guard_spec)?;
    let templates = TypeTemplates::from_corpus(&bundle.corpus);
    let identity = AdapterPair::identity(enc.dim());
    let identity_side = guard_side(&bundle.corpus, &templates, enc, &identity, max_queries)?;
    let tuned_side = guard_side(&bundle.corpus, &templates, enc, tuned, max_queries)?;
    Ok(GuardReport {
        queries: bundle.corpus.graph.edge_count().min(max_queries),
        identity: identity_side,
        fine_tuned: tuned_side,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentSideReport {
    pub average_match_rate: f64,
    pub global_match_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentRunRow {
    pub question: String,
    pub keywords: Vec<String>,
    pub answer_base: String,
    pub answer_with_tool: String,
}

/// Agent benchmark: the same rule policy with and without the search tool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Experiment3Report {
    pub base: AgentSideReport,
    pub with_tool: AgentSideReport,
    pub raw: Vec<AgentRunRow>,
}

/// Run every benchmark question through two agents: the bare loop (no
/// tools registered) and the same loop with the semantic search tool.
pub fn run_experiment3(
    bench: &KeywordBenchmark,
    ctx: &SearchContext,
    vocab: &[String],
    tool_k: usize,
    config: &AgentConfig,
) -> Result<Experiment3Report> {
    let empty_registry = ToolRegistry::new();
    let mut tool_registry = ToolRegistry::new();
    tool_registry.register(pact_tool(ctx.clone(), tool_k))?;

    let mut base_answers = Vec::with_capacity(bench.items().len());
    let mut tool_answers = Vec::with_capacity(bench.items().len());
    let mut raw = Vec::with_capacity(bench.items().len());
    for item in bench.items() {
        let mut base_policy = RulePolicy::new(vocab.iter().cloned());
        let base = run_agent(&item.question, &mut base_policy, &empty_registry, config)?;
        let mut tool_policy = RulePolicy::new(vocab.iter().cloned());
        let with_tool = run_agent(&item.question, &mut tool_policy, &tool_registry, config)?;
        raw.push(AgentRunRow {
            question: item.question.clone(),
            keywords: item.keywords.clone(),
            answer_base: base.final_answer.clone(),
            answer_with_tool: with_tool.final_answer.clone(),
        });
        base_answers.push(base.final_answer);
        tool_answers.push(with_tool.final_answer);
    }
    let (base_avg, base_global) = match_rates(bench, &base_answers)?;
    let (tool_avg, tool_global) = match_rates(bench, &tool_answers)?;
    Ok(Experiment3Report {
        base: AgentSideReport {
            average_match_rate: base_avg,
            global_match_rate: base_global,
        },
        with_tool: AgentSideReport {
            average_match_rate: tool_avg,
            global_match_rate: tool_global,
        },
        raw,
    })
}
