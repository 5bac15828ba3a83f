//! Black-box tests of the `pact` binary: the full file-to-file pipeline,
//! seeded determinism, config-file behavior, and exit codes.

use std::path::Path;
use std::process::Command;

fn pact() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pact"))
}

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn gen_world(dir: &Path, seed: &str) {
    run_ok(pact().args([
        "gen-synthetic",
        "--seed",
        seed,
        "-o",
        dir.to_str().unwrap(),
        "--teams",
        "8",
        "--files-min",
        "3",
        "--files-max",
        "5",
        "--products",
        "5",
        "--vocab-size",
        "60",
        "--bench-questions",
        "6",
        "--catalog-nodes",
        "50",
        "--projects",
        "12",
        "--quiet",
    ]));
}

#[test]
fn gen_synthetic_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    gen_world(&a, "7");
    gen_world(&b, "7");
    for file in ["corpus.jsonl", "bench.jsonl", "catalog.jsonl", "projects.jsonl", "vocab.txt"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file} differs for the same seed"
        );
    }
    let c = dir.path().join("c");
    gen_world(&c, "8");
    assert_ne!(
        std::fs::read(a.join("corpus.jsonl")).unwrap(),
        std::fs::read(c.join("corpus.jsonl")).unwrap(),
        "different seeds must differ"
    );
}

#[test]
fn full_pipeline_produces_parseable_reports() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world");
    gen_world(&world, "7");
    let world_s = world.to_str().unwrap().to_string();
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    run_ok(pact().args([
        "ingest",
        "--corpus",
        &format!("{world_s}/corpus.jsonl"),
        "--quiet",
    ]));

    run_ok(pact().args([
        "train",
        "--corpus",
        &format!("{world_s}/corpus.jsonl"),
        "-o",
        &path("adapters.bin"),
        "--report",
        &path("train.json"),
        "--dim",
        "96",
        "--epochs",
        "6",
        "--quiet",
    ]));
    let train_report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("train.json")).unwrap())
            .unwrap();
    assert!(train_report["epochs"].as_array().unwrap().len() >= 2);

    run_ok(pact().args([
        "build-index",
        "--corpus",
        &format!("{world_s}/corpus.jsonl"),
        "--adapters",
        &path("adapters.bin"),
        "--dim",
        "96",
        "-o",
        &path("index.bin"),
        "--quiet",
    ]));
    run_ok(pact().args([
        "knn-graph",
        "--index",
        &path("index.bin"),
        "--k",
        "3",
        "-o",
        &path("graph.jsonl"),
        "--quiet",
    ]));

    let stdout = run_ok(pact().args([
        "search",
        "--index",
        &path("index.bin"),
        "--adapters",
        &path("adapters.bin"),
        "--corpus",
        &format!("{world_s}/corpus.jsonl"),
        "--graph",
        &path("graph.jsonl"),
        "--k",
        "3",
        "--hops",
        "1",
        "--quiet",
        "payment flows",
    ]));
    let result: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(result["hits"].as_array().unwrap().len() >= 3);

    run_ok(pact().args([
        "eval-recall",
        "--corpus",
        &format!("{world_s}/corpus.jsonl"),
        "--report",
        &path("recall.json"),
        "--csv",
        &path("recall.csv"),
        "--dim",
        "96",
        "--epochs",
        "6",
        "--no-guard",
        "--quiet",
    ]));
    let recall: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("recall.json")).unwrap())
            .unwrap();
    assert_eq!(
        recall["metrics"]["experiment1"]["methods"]
            .as_array()
            .unwrap()
            .len(),
        3
    );
    let csv = std::fs::read_to_string(dir.path().join("recall.csv")).unwrap();
    assert!(csv.starts_with("method,k,recall"));

    run_ok(pact().args([
        "eval-fetcher",
        "--catalog",
        &format!("{world_s}/catalog.jsonl"),
        "--projects",
        &format!("{world_s}/projects.jsonl"),
        "--methods",
        "llm,knn,hybrid",
        "--ranker",
        "lexical",
        "--dim",
        "96",
        "--report",
        &path("fetcher.json"),
        "--quiet",
    ]));
    let fetcher: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fetcher.json")).unwrap())
            .unwrap();
    assert_eq!(fetcher["methods"].as_array().unwrap().len(), 3);

    run_ok(pact().args([
        "eval-agent",
        "--corpus",
        &format!("{world_s}/corpus.jsonl"),
        "--index",
        &path("index.bin"),
        "--adapters",
        &path("adapters.bin"),
        "--bench",
        &format!("{world_s}/bench.jsonl"),
        "--vocab",
        &format!("{world_s}/vocab.txt"),
        "--report",
        &path("agent.json"),
        "--quiet",
    ]));
    let agent: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("agent.json")).unwrap())
            .unwrap();
    assert!(agent["with_tool"]["average_match_rate"].is_number());

    run_ok(pact().args([
        "agent-run",
        "--index",
        &path("index.bin"),
        "--corpus",
        &format!("{world_s}/corpus.jsonl"),
        "--adapters",
        &path("adapters.bin"),
        "--vocab",
        &format!("{world_s}/vocab.txt"),
        "--question",
        "Which team owns the payment service?",
        "--transcript",
        &path("transcript.json"),
        "--quiet",
    ]));
    let transcript: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("transcript.json")).unwrap(),
    )
    .unwrap();
    assert!(transcript["steps"].is_array());
}

#[test]
fn train_and_index_are_deterministic_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world");
    gen_world(&world, "7");
    let world_s = world.to_str().unwrap().to_string();
    for run in ["a", "b"] {
        let adapters = dir.path().join(format!("adapters-{run}.bin"));
        run_ok(pact().args([
            "train",
            "--corpus",
            &format!("{world_s}/corpus.jsonl"),
            "-o",
            adapters.to_str().unwrap(),
            "--dim",
            "64",
            "--epochs",
            "4",
            "--seed",
            "11",
            "--quiet",
        ]));
        let index = dir.path().join(format!("index-{run}.bin"));
        run_ok(pact().args([
            "build-index",
            "--corpus",
            &format!("{world_s}/corpus.jsonl"),
            "--adapters",
            adapters.to_str().unwrap(),
            "--dim",
            "64",
            "--pq",
            "8,16,4",
            "--seed",
            "11",
            "-o",
            index.to_str().unwrap(),
            "--quiet",
        ]));
        let graph = dir.path().join(format!("graph-{run}.jsonl"));
        run_ok(pact().args([
            "knn-graph",
            "--index",
            index.to_str().unwrap(),
            "--k",
            "3",
            "-o",
            graph.to_str().unwrap(),
            "--quiet",
        ]));
    }
    for stem in ["adapters", "index"] {
        assert_eq!(
            std::fs::read(dir.path().join(format!("{stem}-a.bin"))).unwrap(),
            std::fs::read(dir.path().join(format!("{stem}-b.bin"))).unwrap(),
            "{stem} differs across runs"
        );
    }
    assert_eq!(
        std::fs::read(dir.path().join("graph-a.jsonl")).unwrap(),
        std::fs::read(dir.path().join("graph-b.jsonl")).unwrap()
    );
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("pact.conf");
    std::fs::write(&config, "# generation defaults\nteams = 6\nproducts = 5\n").unwrap();
    let out = dir.path().join("world");
    run_ok(pact().args([
        "gen-synthetic",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "7",
        "-o",
        out.to_str().unwrap(),
        "--files-min",
        "3",
        "--files-max",
        "4",
        "--vocab-size",
        "60",
        "--bench-questions",
        "4",
        "--catalog-nodes",
        "30",
        "--projects",
        "8",
        // explicit flag beats the config value
        "--teams",
        "7",
        "--quiet",
    ]));
    let stdout = run_ok(pact().args([
        "ingest",
        "--corpus",
        out.join("corpus.jsonl").to_str().unwrap(),
        "--quiet",
    ]));
    let stats: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let team_count = stats["types"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["type"] == "oncall_team")
        .unwrap()["count"]
        .as_u64()
        .unwrap();
    assert_eq!(team_count, 7, "--teams flag must override config");
    let product_count = stats["types"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["type"] == "product")
        .unwrap()["count"]
        .as_u64()
        .unwrap();
    assert_eq!(product_count, 5, "config value must apply when flag absent");
}

#[test]
fn exit_codes() {
    // unknown subcommand: usage error, exit 2
    let status = pact().arg("no-such-command").output().unwrap();
    assert_eq!(status.status.code(), Some(2));

    // missing file: domain error, exit 1
    let output = pact()
        .args(["ingest", "--corpus", "/nonexistent/corpus.jsonl"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));

    // same, but machine-readable
    let output = pact()
        .args([
            "ingest",
            "--corpus",
            "/nonexistent/corpus.jsonl",
            "--json-errors",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&output.stderr).trim()).unwrap();
    assert!(err["error"].is_string());
    assert!(err["kind"].is_string());

    // --help everywhere
    for sub in [
        "gen-synthetic",
        "ingest",
        "train",
        "build-index",
        "knn-graph",
        "search",
        "eval-recall",
        "eval-fetcher",
        "eval-agent",
        "agent-run",
    ] {
        let output = pact().args([sub, "--help"]).output().unwrap();
        assert!(output.status.success(), "--help failed for {sub}");
    }
}

#[test]
fn corrupt_corpus_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("bad.jsonl");
    std::fs::write(
        &corpus,
        "{\"types\":[\"doc\"],\"version\":1}\n{\"id\":\"a\",\"type\":\"doc\",\"fields\":[[\"name\",\"x\"]]}\nnot json\n",
    )
    .unwrap();
    let output = pact()
        .args(["ingest", "--corpus", corpus.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 3"), "stderr was: {stderr}");
}
