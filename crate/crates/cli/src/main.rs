//! `pact`: one binary over the whole pipeline. Every stage reads and
//! writes explicit paths, so runs are reproducible file-to-file.

mod config;
mod http;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::ConfigMap;
use pact_core::agent::{
    pact_tool, run_agent, AgentConfig, AgentPolicy, RemotePolicy, RulePolicy, ScriptedPolicy,
    ToolRegistry,
};
use pact_core::artifact::TypeTemplates;
use pact_core::embed::{load_adapters, save_adapters, AdapterPair, BaseEncoder};
use pact_core::error::PactError;
use pact_core::eval::{run_experiment1, run_experiment3, run_generalization_guard, KeywordBenchmark};
use pact_core::fetch::{
    evaluate_fetchers, load_catalog, load_projects, FetchMethod, LexicalRanker, Ranker,
    RemoteRanker, ScriptedRanker,
};
use pact_core::index::{load_index, save_index, VectorIndex};
use pact_core::knn::{load_knn_graph, save_knn_graph, KnnGraph};
use pact_core::search::{SearchContext, SearchRequest};
use pact_core::synth::{self, SyntheticSpec};
use pact_core::train::TrainConfig;
use pact_core::{load_corpus, write_corpus};

#[derive(Parser)]
#[command(
    name = "pact",
    about = "Embed, link, index, search, and evaluate enterprise artifacts",
    version
)]
struct Cli {
    /// Seed applied to the invoked stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` file; explicit flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    /// Emit errors as JSON on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus bundle into a directory.
    GenSynthetic(GenArgs),
    /// Validate a corpus file and optionally rewrite it canonically.
    Ingest(IngestArgs),
    /// Fine-tune query/context adapters on a corpus link graph.
    Train(TrainArgs),
    /// Embed a corpus into a binary vector index.
    BuildIndex(BuildIndexArgs),
    /// Build the KNN semantic graph over an index.
    KnnGraph(KnnArgs),
    /// Semantic search against an index.
    Search(SearchArgs),
    /// Recall experiment: heuristic vs identity vs fine-tuned.
    EvalRecall(EvalRecallArgs),
    /// Compare candidate-fetching methods on a node catalog.
    EvalFetcher(EvalFetcherArgs),
    /// Keyword benchmark for the agent with and without the search tool.
    EvalAgent(EvalAgentArgs),
    /// Run one agent episode and dump the transcript.
    AgentRun(AgentRunArgs),
}

#[derive(clap::Args)]
struct GenArgs {
    /// Output directory for the bundle files.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    teams: usize,
    #[arg(long, default_value_t = 8)]
    files_min: usize,
    #[arg(long, default_value_t = 14)]
    files_max: usize,
    #[arg(long, default_value_t = 12)]
    products: usize,
    #[arg(long, default_value_t = 200)]
    vocab_size: usize,
    /// Fraction of theme groups linked without any shared vocabulary.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value = "core")]
    namespace: String,
    #[arg(long, default_value_t = 20)]
    bench_questions: usize,
    #[arg(long, default_value_t = 350)]
    catalog_nodes: usize,
    #[arg(long, default_value_t = 150)]
    projects: usize,
}

#[derive(clap::Args)]
struct IngestArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Rewrite the corpus canonically to this path.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Adapter output file.
    #[arg(short, long)]
    out: PathBuf,
    /// Training report (JSON) output path.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 384)]
    dim: usize,
    #[arg(long, default_value_t = 7)]
    encoder_seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 5.0)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    negatives: usize,
    #[arg(long, default_value_t = 0.0125)]
    weight_decay: f64,
    #[arg(long, default_value_t = 1.0)]
    two_hop_weight: f64,
    /// Skip second-degree positive pairs.
    #[arg(long)]
    no_two_hop: bool,
    /// Skip in-batch negatives.
    #[arg(long)]
    no_in_batch: bool,
    /// Train the query adapter only.
    #[arg(long)]
    freeze_context: bool,
    /// Hold out a test split (e.g. `5:1`) and train on the rest.
    #[arg(long)]
    holdout: Option<String>,
}

#[derive(clap::Args)]
struct BuildIndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Adapter file; identity adapters when omitted.
    #[arg(long)]
    adapters: Option<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 384)]
    dim: usize,
    #[arg(long, default_value_t = 7)]
    encoder_seed: u64,
    /// Product quantization as `m,ksub[,iters]`.
    #[arg(long)]
    pq: Option<String>,
    /// Keep only PQ codes, dropping exact vectors.
    #[arg(long)]
    drop_exact: bool,
    /// L2-normalize stored vectors (cosine-style experiments).
    #[arg(long)]
    cosine: bool,
}

#[derive(clap::Args)]
struct KnnArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(clap::Args)]
struct SearchArgs {
    /// Free-form query.
    query: String,
    #[arg(long)]
    index: PathBuf,
    /// KNN graph file for `--hops`.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    adapters: Option<PathBuf>,
    /// Corpus file, used for result snippets.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Comma-separated type filter.
    #[arg(long)]
    types: Option<String>,
    #[arg(long, default_value_t = 0)]
    hops: usize,
    /// L2-normalize the query vector before scoring.
    #[arg(long)]
    cosine: bool,
    /// Human-readable table instead of JSON.
    #[arg(long)]
    pretty: bool,
}

#[derive(clap::Args)]
struct EvalRecallArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Plot-ready CSV output path.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 384)]
    dim: usize,
    #[arg(long, default_value_t = 7)]
    encoder_seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 5.0)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    negatives: usize,
    #[arg(long, default_value_t = 0.0125)]
    weight_decay: f64,
    /// Train : test ratio.
    #[arg(long, default_value = "5:1")]
    split: String,
    /// Skip the disjoint-vocabulary generalization guard.
    #[arg(long)]
    no_guard: bool,
}

#[derive(clap::Args)]
struct EvalFetcherArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    projects: PathBuf,
    /// Comma-separated subset of llm,knn,hybrid.
    #[arg(long, default_value = "llm,knn,hybrid")]
    methods: String,
    /// lexical | scripted:FILE | remote
    #[arg(long, default_value = "lexical")]
    ranker: String,
    /// Completion endpoint for the remote ranker.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    adapters: Option<PathBuf>,
    #[arg(long, default_value_t = 384)]
    dim: usize,
    #[arg(long, default_value_t = 7)]
    encoder_seed: u64,
    #[arg(long, default_value_t = 40)]
    shortlist: usize,
    #[arg(long)]
    report: PathBuf,
}

#[derive(clap::Args)]
struct EvalAgentArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    adapters: Option<PathBuf>,
    #[arg(long)]
    bench: PathBuf,
    /// Known-word list for the rule policy.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    max_steps: usize,
    #[arg(long)]
    report: PathBuf,
}

#[derive(clap::Args)]
struct AgentRunArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    adapters: Option<PathBuf>,
    /// rule | scripted:FILE | remote
    #[arg(long, default_value = "rule")]
    policy: String,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    question: String,
    #[arg(long, default_value_t = 8)]
    max_steps: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Transcript output path (JSON); stdout when omitted.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let json_errors = cli.json_errors;
    match run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json_errors {
                eprintln!(
                    "{}",
                    serde_json::json!({"error": e.to_string(), "kind": error_kind(&e)})
                );
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(1)
        }
    }
}

fn error_kind(e: &PactError) -> &'static str {
    match e {
        PactError::Parse { .. } => "parse",
        PactError::DanglingEdge { .. } => "dangling_edge",
        PactError::Io(_) => "io",
        PactError::Json(_) => "json",
        PactError::InvalidArgument(_) => "invalid_argument",
        _ => "domain",
    }
}

fn run(cli: Cli, matches: &ArgMatches) -> Result<(), PactError> {
    let cfg = match &cli.config {
        Some(path) => ConfigMap::load(path).map_err(PactError::InvalidArgument)?,
        None => ConfigMap::empty(),
    };
    let sub_matches = matches
        .subcommand()
        .map(|(_, m)| m)
        .expect("subcommand required");
    let mut seed = cli.seed;
    config::merge_opt(&mut seed, sub_matches, &cfg, "seed")
        .map_err(PactError::InvalidArgument)?;
    let quiet = cli.quiet || cfg.get("quiet") == Some("true");
    let progress = |msg: &str| {
        if !quiet {
            eprintln!("{msg}");
        }
    };

    match cli.command {
        Command::GenSynthetic(mut args) => {
            mergers::gen(&mut args, sub_matches, &cfg)?;
            let spec = SyntheticSpec {
                seed: seed.unwrap_or(7),
                teams: args.teams,
                files_per_team: (args.files_min, args.files_max),
                products: args.products,
                vocab_size: args.vocab_size,
                link_noise: args.noise,
                namespace: args.namespace.clone(),
                bench_questions: args.bench_questions,
                catalog_nodes: args.catalog_nodes,
                catalog_projects: args.projects,
                ..SyntheticSpec::default()
            };
            let bundle = synth::generate(&spec)?;
            synth::write_bundle(&bundle, &args.out)?;
            progress(&format!(
                "wrote {} artifacts, {} edges, {} bench questions, {} catalog nodes to {}",
                bundle.corpus.len(),
                bundle.corpus.graph.edge_count(),
                bundle.bench.items().len(),
                bundle.catalog.len(),
                args.out.display()
            ));
        }
        Command::Ingest(args) => {
            let corpus = load_corpus(&args.corpus)?;
            let mut per_type: Vec<(String, usize)> = corpus
                .types
                .iter()
                .map(|t| {
                    (
                        t.as_str().to_string(),
                        corpus.artifacts_of_type(t).count(),
                    )
                })
                .collect();
            per_type.sort();
            println!(
                "{}",
                serde_json::json!({
                    "artifacts": corpus.len(),
                    "edges": corpus.graph.edge_count(),
                    "types": per_type.iter().map(|(t, n)| serde_json::json!({"type": t, "count": n})).collect::<Vec<_>>(),
                })
            );
            if let Some(out) = &args.out {
                write_corpus(&corpus, out)?;
                progress(&format!("rewrote corpus to {}", out.display()));
            }
        }
        Command::Train(mut args) => {
            mergers::train(&mut args, sub_matches, &cfg)?;
            let corpus = load_corpus(&args.corpus)?;
            let templates = TypeTemplates::from_corpus(&corpus);
            let enc = BaseEncoder::feature_hash(args.dim, args.encoder_seed);
            let train_cfg = train_config_from(&args, seed)?;
            let graph_edges;
            let graph = if let Some(ratio) = &args.holdout {
                let ratio = parse_ratio(ratio)?;
                let (train_side, test_side) = pact_core::train::split_edges(
                    corpus.graph.edges(),
                    ratio,
                    train_cfg.seed,
                );
                progress(&format!(
                    "holding out {} of {} edges",
                    test_side.len(),
                    corpus.graph.edge_count()
                ));
                graph_edges = pact_core::LinkGraph::new(train_side)?;
                &graph_edges
            } else {
                &corpus.graph
            };
            let (adapters, report) =
                pact_core::train(&corpus, graph, &train_cfg, &templates, &enc)?;
            save_adapters(&adapters, &args.out)?;
            progress(&format!(
                "trained {} examples, loss {:.4} -> {:.4}, adapters -> {}",
                report.examples,
                report.initial_loss(),
                report.final_loss(),
                args.out.display()
            ));
            if let Some(path) = &args.report {
                std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
            }
        }
        Command::BuildIndex(mut args) => {
            mergers::build_index(&mut args, sub_matches, &cfg)?;
            let corpus = load_corpus(&args.corpus)?;
            let templates = TypeTemplates::from_corpus(&corpus);
            let enc = BaseEncoder::feature_hash(args.dim, args.encoder_seed);
            let adapters = load_adapters_or_identity(&args.adapters, args.dim)?;
            let mut index = VectorIndex::build_exact(&corpus, &templates, &enc, &adapters)?;
            if args.cosine {
                index = normalize_index(index)?;
            }
            if let Some(pq_spec) = &args.pq {
                let (m, ksub, iters) = parse_pq(pq_spec)?;
                index.train_pq(m, ksub, iters, seed.unwrap_or(7))?;
                if args.drop_exact {
                    index.drop_exact()?;
                }
            } else if args.drop_exact {
                return Err(PactError::InvalidArgument(
                    "--drop-exact requires --pq".into(),
                ));
            }
            save_index(&index, &args.out)?;
            progress(&format!(
                "indexed {} artifacts (dim {}) -> {}",
                index.len(),
                index.dim,
                args.out.display()
            ));
        }
        Command::KnnGraph(mut args) => {
            mergers::knn(&mut args, sub_matches, &cfg)?;
            let index = load_index(&args.index)?;
            let graph = KnnGraph::build(&index, args.k)?;
            save_knn_graph(&graph, &args.out)?;
            progress(&format!(
                "graph: {} nodes, {} edges (k = {}) -> {}",
                graph.node_count(),
                graph.edge_count(),
                graph.k(),
                args.out.display()
            ));
        }
        Command::Search(mut args) => {
            mergers::search(&mut args, sub_matches, &cfg)?;
            let index = load_index(&args.index)?;
            let enc = BaseEncoder::feature_hash(index.dim, index.encoder_seed);
            let adapters = load_adapters_or_identity(&args.adapters, index.dim)?;
            if args.adapters.is_some() && !index.adapters_match(&adapters) {
                progress("warning: adapter checksum does not match the index header");
            }
            let mut ctx = SearchContext::new(index, adapters, enc);
            if let Some(graph_path) = &args.graph {
                let graph = load_knn_graph(graph_path, &ctx.index)?;
                ctx = ctx.with_graph(graph);
            }
            if let Some(corpus_path) = &args.corpus {
                let corpus = load_corpus(corpus_path)?;
                let templates = TypeTemplates::from_corpus(&corpus);
                ctx = ctx.with_corpus(&corpus, &templates)?;
            }
            let mut request = SearchRequest::new(&args.query, args.k).with_hops(args.hops);
            if let Some(types) = &args.types {
                request = request.with_types(parse_types(types));
            }
            let mut result = ctx.search(&request)?;
            if args.cosine {
                // report cosine-scaled scores: with an index built under
                // --cosine this makes direct-hit scores true cosines;
                // ranking is unaffected either way
                let q = pact_core::encode_query(&args.query, &ctx.encoder, &ctx.adapters)?;
                let norm = q.l2_norm();
                if norm > 0.0 {
                    for hit in result.hits.iter_mut() {
                        if hit.provenance == pact_core::search::Provenance::Direct {
                            hit.score /= norm;
                        }
                    }
                }
            }
            if args.pretty {
                for (i, hit) in result.hits.iter().enumerate() {
                    let provenance = match &hit.provenance {
                        pact_core::search::Provenance::Direct => "direct".to_string(),
                        pact_core::search::Provenance::GraphEdge { from } => {
                            format!("via {from}")
                        }
                    };
                    println!(
                        "{:>2}. {:<12} {:<24} {:>8.4}  {}  {}",
                        i + 1,
                        hit.ty.to_string(),
                        hit.id.to_string(),
                        hit.score,
                        provenance,
                        hit.snippet
                    );
                }
                progress(&format!("{:.2} ms", result.latency_ms));
            } else {
                println!("{}", serde_json::to_string_pretty(&result)?);
            }
        }
        Command::EvalRecall(mut args) => {
            mergers::eval_recall(&mut args, sub_matches, &cfg)?;
            let corpus = load_corpus(&args.corpus)?;
            let enc = BaseEncoder::feature_hash(args.dim, args.encoder_seed);
            let train_cfg = TrainConfig {
                negatives_per_positive: args.negatives,
                epochs: args.epochs,
                learning_rate: args.lr,
                batch_size: args.batch_size,
                seed: seed.unwrap_or(7),
                split_ratio: parse_ratio(&args.split)?,
                weight_decay: args.weight_decay,
                ..TrainConfig::default()
            };
            let (report, tuned) = run_experiment1(&corpus, &train_cfg, &enc)?;
            for method in &report.methods {
                let recalls: Vec<String> = method
                    .recall_at
                    .iter()
                    .map(|(k, r)| format!("@{k}={r:.3}"))
                    .collect();
                progress(&format!("{}: {}", method.method, recalls.join(" ")));
            }
            let mut output = serde_json::json!({
                "metrics": {
                    "experiment1": report,
                },
                "raw": report.methods.iter().map(|m| serde_json::json!({
                    "method": m.method,
                    "rows": m.raw,
                })).collect::<Vec<_>>(),
            });
            if !args.no_guard {
                let guard_spec = SyntheticSpec {
                    namespace: "guard".into(),
                    seed: 104729,
                    link_noise: 0.0,
                    theme_tokens_per_desc: 5,
                    desc_len: (6, 10),
                    ..SyntheticSpec::default()
                };
                let guard = run_generalization_guard(&tuned, &enc, &guard_spec, 200)?;
                progress(&format!(
                    "guard: identity ndcg@10 {:.3} vs fine-tuned {:.3}",
                    guard.identity.ndcg_at_10, guard.fine_tuned.ndcg_at_10
                ));
                output["metrics"]["generalization_guard"] = serde_json::to_value(&guard)?;
            }
            std::fs::write(&args.report, serde_json::to_string_pretty(&output)?)?;
            if let Some(csv_path) = &args.csv {
                std::fs::write(csv_path, report.to_csv())?;
            }
        }
        Command::EvalFetcher(mut args) => {
            mergers::eval_fetcher(&mut args, sub_matches, &cfg)?;
            let catalog = load_catalog(&args.catalog)?;
            let projects = load_projects(&args.projects)?;
            let methods: Vec<FetchMethod> = args
                .methods
                .split(',')
                .map(|m| FetchMethod::parse(m.trim()))
                .collect::<Result<_, _>>()?;
            let enc = BaseEncoder::feature_hash(args.dim, args.encoder_seed);
            let adapters = load_adapters_or_identity(&args.adapters, args.dim)?;
            let ranker = build_ranker(&args.ranker, args.endpoint.as_deref())?;
            let report = evaluate_fetchers(
                &catalog,
                &projects,
                &methods,
                ranker.as_ref(),
                &enc,
                &adapters,
                args.shortlist,
            )?;
            for m in &report.methods {
                progress(&format!(
                    "{:?}: T1={:.3} T5={:.3} T20={:.3} mean_latency={:.2}ms ranker_calls={}",
                    m.method, m.t1_rate, m.t5_rate, m.t20_rate, m.mean_latency_ms, m.ranker_calls
                ));
            }
            std::fs::write(&args.report, serde_json::to_string_pretty(&report)?)?;
        }
        Command::EvalAgent(mut args) => {
            mergers::eval_agent(&mut args, sub_matches, &cfg)?;
            let corpus = load_corpus(&args.corpus)?;
            let templates = TypeTemplates::from_corpus(&corpus);
            let index = load_index(&args.index)?;
            let enc = BaseEncoder::feature_hash(index.dim, index.encoder_seed);
            let adapters = load_adapters_or_identity(&args.adapters, index.dim)?;
            let bench = KeywordBenchmark::load(&args.bench)?;
            let vocab = match &args.vocab {
                Some(path) => synth::load_vocab(path)?,
                None => Vec::new(),
            };
            let ctx = SearchContext::new(index, adapters, enc)
                .with_corpus(&corpus, &templates)?;
            let agent_cfg = AgentConfig {
                max_steps: args.max_steps,
                ..AgentConfig::default()
            };
            let report = run_experiment3(&bench, &ctx, &vocab, args.k, &agent_cfg)?;
            progress(&format!(
                "base: avg {:.3} global {:.3} | with tool: avg {:.3} global {:.3}",
                report.base.average_match_rate,
                report.base.global_match_rate,
                report.with_tool.average_match_rate,
                report.with_tool.global_match_rate
            ));
            std::fs::write(&args.report, serde_json::to_string_pretty(&report)?)?;
        }
        Command::AgentRun(mut args) => {
            mergers::agent_run(&mut args, sub_matches, &cfg)?;
            let index = load_index(&args.index)?;
            let enc = BaseEncoder::feature_hash(index.dim, index.encoder_seed);
            let adapters = load_adapters_or_identity(&args.adapters, index.dim)?;
            let mut ctx = SearchContext::new(index, adapters, enc);
            if let Some(corpus_path) = &args.corpus {
                let corpus = load_corpus(corpus_path)?;
                let templates = TypeTemplates::from_corpus(&corpus);
                ctx = ctx.with_corpus(&corpus, &templates)?;
            }
            let mut registry = ToolRegistry::new();
            registry.register(pact_tool(ctx, args.k))?;
            let mut policy = build_policy(&args, &registry)?;
            let agent_cfg = AgentConfig {
                max_steps: args.max_steps,
                ..AgentConfig::default()
            };
            let transcript = run_agent(&args.question, policy.as_mut(), &registry, &agent_cfg)?;
            let rendered = serde_json::to_string_pretty(&transcript)?;
            match &args.transcript {
                Some(path) => {
                    std::fs::write(path, rendered)?;
                    progress(&format!(
                        "{} steps, stopped {:?}",
                        transcript.steps.len(),
                        transcript.stopped
                    ));
                }
                None => println!("{rendered}"),
            }
        }
    }
    Ok(())
}

fn train_config_from(args: &TrainArgs, seed: Option<u64>) -> Result<TrainConfig, PactError> {
    Ok(TrainConfig {
        negatives_per_positive: args.negatives,
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: args.batch_size,
        seed: seed.unwrap_or(7),
        include_two_hop: !args.no_two_hop,
        in_batch_negatives: !args.no_in_batch,
        split_ratio: (5, 1),
        two_hop_weight: args.two_hop_weight,
        freeze_context: args.freeze_context,
        weight_decay: args.weight_decay,
    })
}

fn load_adapters_or_identity(
    path: &Option<PathBuf>,
    dim: usize,
) -> Result<AdapterPair, PactError> {
    match path {
        Some(p) => {
            let adapters = load_adapters(p)?;
            if adapters.dim() != dim {
                return Err(PactError::DimMismatch {
                    left: adapters.dim(),
                    right: dim,
                });
            }
            Ok(adapters)
        }
        None => Ok(AdapterPair::identity(dim)),
    }
}

fn normalize_index(index: VectorIndex) -> Result<VectorIndex, PactError> {
    let items = index
        .entries()
        .iter()
        .map(|e| {
            let norm = e.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            let vector = if norm > 0.0 {
                e.vector.iter().map(|x| x / norm).collect()
            } else {
                e.vector.clone()
            };
            (e.id.clone(), e.ty.clone(), vector)
        })
        .collect();
    VectorIndex::from_vectors(items, index.encoder_seed, index.adapter_checksum)
}

fn parse_ratio(raw: &str) -> Result<(u32, u32), PactError> {
    let (a, b) = raw
        .split_once(':')
        .ok_or_else(|| PactError::InvalidArgument(format!("ratio `{raw}` is not `a:b`")))?;
    let a = a
        .trim()
        .parse()
        .map_err(|e| PactError::InvalidArgument(format!("ratio: {e}")))?;
    let b = b
        .trim()
        .parse()
        .map_err(|e| PactError::InvalidArgument(format!("ratio: {e}")))?;
    Ok((a, b))
}

fn parse_pq(raw: &str) -> Result<(usize, usize, usize), PactError> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(PactError::InvalidArgument(format!(
            "--pq expects `m,ksub[,iters]`, got `{raw}`"
        )));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| PactError::InvalidArgument(format!("--pq: {e}")))
    };
    Ok((
        parse(parts[0])?,
        parse(parts[1])?,
        if parts.len() == 3 { parse(parts[2])? } else { 10 },
    ))
}

fn parse_types(raw: &str) -> BTreeSet<pact_core::ArtifactType> {
    pact_core::fetch::parse_type_set(raw)
}

fn build_ranker(
    spec: &str,
    endpoint: Option<&str>,
) -> Result<Box<dyn Ranker>, PactError> {
    if spec == "lexical" {
        return Ok(Box::new(LexicalRanker));
    }
    if let Some(path) = spec.strip_prefix("scripted:") {
        return Ok(Box::new(ScriptedRanker::from_file(path)?));
    }
    if spec == "remote" {
        let endpoint = endpoint.ok_or_else(|| {
            PactError::InvalidArgument("--ranker remote requires --endpoint".into())
        })?;
        return Ok(Box::new(RemoteRanker::new(http::HttpCompletionClient::new(
            endpoint,
        )?)));
    }
    Err(PactError::InvalidArgument(format!(
        "unknown ranker `{spec}` (expected lexical, scripted:FILE, or remote)"
    )))
}

fn build_policy(
    args: &AgentRunArgs,
    registry: &ToolRegistry,
) -> Result<Box<dyn AgentPolicy>, PactError> {
    if args.policy == "rule" {
        let vocab = match &args.vocab {
            Some(path) => synth::load_vocab(path)?,
            None => Vec::new(),
        };
        return Ok(Box::new(RulePolicy::new(vocab)));
    }
    if let Some(path) = args.policy.strip_prefix("scripted:") {
        return Ok(Box::new(ScriptedPolicy::from_file(path)?));
    }
    if args.policy == "remote" {
        let endpoint = args.endpoint.as_deref().ok_or_else(|| {
            PactError::InvalidArgument("--policy remote requires --endpoint".into())
        })?;
        return Ok(Box::new(RemotePolicy::new(
            http::HttpCompletionClient::new(endpoint)?,
            registry,
        )));
    }
    Err(PactError::InvalidArgument(format!(
        "unknown policy `{}` (expected rule, scripted:FILE, or remote)",
        args.policy
    )))
}

/// Config-file overrides per subcommand; flags given on the command line
/// always win.
mod mergers {
    use super::*;
    use config::{merge, merge_opt};

    type R = Result<(), PactError>;

    fn wrap(r: Result<(), String>) -> R {
        r.map_err(PactError::InvalidArgument)
    }

    pub fn gen(a: &mut GenArgs, m: &ArgMatches, c: &ConfigMap) -> R {
        wrap(merge(&mut a.teams, m, c, "teams"))?;
        wrap(merge(&mut a.files_min, m, c, "files_min"))?;
        wrap(merge(&mut a.files_max, m, c, "files_max"))?;
        wrap(merge(&mut a.products, m, c, "products"))?;
        wrap(merge(&mut a.vocab_size, m, c, "vocab_size"))?;
        wrap(merge(&mut a.noise, m, c, "noise"))?;
        wrap(merge(&mut a.namespace, m, c, "namespace"))?;
        wrap(merge(&mut a.bench_questions, m, c, "bench_questions"))?;
        wrap(merge(&mut a.catalog_nodes, m, c, "catalog_nodes"))?;
        wrap(merge(&mut a.projects, m, c, "projects"))
    }

    pub fn train(a: &mut TrainArgs, m: &ArgMatches, c: &ConfigMap) -> R {
        wrap(merge(&mut a.dim, m, c, "dim"))?;
        wrap(merge(&mut a.encoder_seed, m, c, "encoder_seed"))?;
        wrap(merge(&mut a.epochs, m, c, "epochs"))?;
        wrap(merge(&mut a.lr, m, c, "lr"))?;
        wrap(merge(&mut a.batch_size, m, c, "batch_size"))?;
        wrap(merge(&mut a.negatives, m, c, "negatives"))?;
        wrap(merge(&mut a.weight_decay, m, c, "weight_decay"))?;
        wrap(merge(&mut a.two_hop_weight, m, c, "two_hop_weight"))?;
        wrap(merge_opt(&mut a.holdout, m, c, "holdout"))
    }

    pub fn build_index(a: &mut BuildIndexArgs, m: &ArgMatches, c: &ConfigMap) -> R {
        wrap(merge(&mut a.dim, m, c, "dim"))?;
        wrap(merge(&mut a.encoder_seed, m, c, "encoder_seed"))?;
        wrap(merge_opt(&mut a.pq, m, c, "pq"))
    }

    pub fn knn(a: &mut KnnArgs, m: &ArgMatches, c: &ConfigMap) -> R {
        wrap(merge(&mut a.k, m, c, "k"))
    }

    pub fn search(a: &mut SearchArgs, m: &ArgMatches, c: &ConfigMap) -> R {
        wrap(merge(&mut a.k, m, c, "k"))?;
        wrap(merge(&mut a.hops, m, c, "hops"))?;
        wrap(merge_opt(&mut a.types, m, c, "types"))
    }

    pub fn eval_recall(a: &mut EvalRecallArgs, m: &ArgMatches, c: &ConfigMap) -> R {
        wrap(merge(&mut a.dim, m, c, "dim"))?;
        wrap(merge(&mut a.encoder_seed, m, c, "encoder_seed"))?;
        wrap(merge(&mut a.epochs, m, c, "epochs"))?;
        wrap(merge(&mut a.lr, m, c, "lr"))?;
        wrap(merge(&mut a.batch_size, m, c, "batch_size"))?;
        wrap(merge(&mut a.negatives, m, c, "negatives"))?;
        wrap(merge(&mut a.weight_decay, m, c, "weight_decay"))?;
        wrap(merge(&mut a.split, m, c, "split"))
    }

    pub fn eval_fetcher(a: &mut EvalFetcherArgs, m: &ArgMatches, c: &ConfigMap) -> R {
        wrap(merge(&mut a.methods, m, c, "methods"))?;
        wrap(merge(&mut a.ranker, m, c, "ranker"))?;
        wrap(merge_opt(&mut a.endpoint, m, c, "endpoint"))?;
        wrap(merge(&mut a.dim, m, c, "dim"))?;
        wrap(merge(&mut a.encoder_seed, m, c, "encoder_seed"))?;
        wrap(merge(&mut a.shortlist, m, c, "shortlist"))
    }

    pub fn eval_agent(a: &mut EvalAgentArgs, m: &ArgMatches, c: &ConfigMap) -> R {
        wrap(merge(&mut a.k, m, c, "k"))?;
        wrap(merge(&mut a.max_steps, m, c, "max_steps"))
    }

    pub fn agent_run(a: &mut AgentRunArgs, m: &ArgMatches, c: &ConfigMap) -> R {
        wrap(merge(&mut a.policy, m, c, "policy"))?;
        wrap(merge_opt(&mut a.endpoint, m, c, "endpoint"))?;
        wrap(merge(&mut a.k, m, c, "k"))?;
        wrap(merge(&mut a.max_steps, m, c, "max_steps"))
    }
}
