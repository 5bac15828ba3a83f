//! Seeded synthetic corpus generator.
//!
//! The world is built from theme groups: each group is one oncall team
//! plus a handful of code files linked to it, and every team supports one
//! product. Descriptions mix planted theme tokens with shared filler
//! vocabulary. A configurable fraction of groups is "non-lexical": the
//! file side and the team side draw from disjoint pools, so nothing ties
//! the pair together except the link structure itself. Those links are
//! invisible to any lexical method but learnable from the graph, which is
//! exactly the signal fine-tuning is supposed to pick up.
//!
//! The generator also emits the keyword benchmark, the fetcher catalog and
//! project set, and the known-word list for the rule policy. Everything is
//! byte-identical across runs and platforms for a fixed seed.

use std::io::Write as IoWrite;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, ArtifactId, ArtifactType, Corpus, LinkEdge};
use crate::error::{PactError, Result};
use crate::eval::KeywordBenchmark;
use crate::fetch::{CatalogNode, NodeCatalog, ProjectCase};

pub const TYPE_CODE_PATH: &str = "code_path";
pub const TYPE_ONCALL_TEAM: &str = "oncall_team";
pub const TYPE_PRODUCT: &str = "product";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Theme groups; one team each.
    pub teams: usize,
    /// Inclusive fan-out range of files per team.
    pub files_per_team: (usize, usize),
    pub products: usize,
    /// Shared filler vocabulary size.
    pub vocab_size: usize,
    /// Inclusive description length range, in tokens.
    pub desc_len: (usize, usize),
    /// Theme tokens planted per description.
    pub theme_tokens_per_desc: usize,
    /// Fraction of theme groups whose linked sides share no tokens.
    pub link_noise: f64,
    /// Token namespace; disjoint namespaces give disjoint vocabularies.
    pub namespace: String,
    pub bench_questions: usize,
    pub catalog_nodes: usize,
    pub catalog_projects: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            teams: 40,
            files_per_team: (8, 14),
            products: 12,
            vocab_size: 200,
            desc_len: (6, 12),
            theme_tokens_per_desc: 4,
            link_noise: 0.2,
            namespace: "core".into(),
            bench_questions: 20,
            catalog_nodes: 350,
            catalog_projects: 150,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        // default training samples 4 negatives per positive, so every
        // linked type needs at least 5 members
        if self.teams < 5 || self.products < 5 {
            return Err(PactError::SpecInfeasible(
                "need at least 5 teams and 5 products".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.link_noise) {
            return Err(PactError::SpecInfeasible(
                "link_noise must be in [0, 1)".into(),
            ));
        }
        if self.files_per_team.0 < 1 || self.files_per_team.0 > self.files_per_team.1 {
            return Err(PactError::SpecInfeasible("bad files_per_team range".into()));
        }
        if self.desc_len.0 < self.theme_tokens_per_desc || self.desc_len.0 > self.desc_len.1 {
            return Err(PactError::SpecInfeasible("bad desc_len range".into()));
        }
        if self.theme_tokens_per_desc > THEME_POOL {
            return Err(PactError::SpecInfeasible(
                "theme_tokens_per_desc exceeds the theme pool size".into(),
            ));
        }
        if self.vocab_size < 10 {
            return Err(PactError::SpecInfeasible("vocab_size too small".into()));
        }
        if self.namespace.is_empty() || self.namespace.chars().any(|c| !c.is_alphanumeric()) {
            return Err(PactError::SpecInfeasible(
                "namespace must be non-empty alphanumeric".into(),
            ));
        }
        Ok(())
    }
}

/// Everything one synthetic world provides.
#[derive(Debug, Clone)]
pub struct SyntheticBundle {
    pub corpus: Corpus,
    pub bench: KeywordBenchmark,
    pub catalog: NodeCatalog,
    pub projects: Vec<ProjectCase>,
    /// Words the rule policy should treat as known.
    pub vocab: Vec<String>,
}

const THEME_POOL: usize = 6;

/// Pseudo-word source: unique random letter strings, so no two words share
/// structure beyond chance. Namespaces seed disjoint streams.
struct WordGen {
    rng: ChaCha8Rng,
    used: std::collections::HashSet<String>,
}

impl WordGen {
    fn new(seed: u64, namespace: &str) -> Self {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in namespace.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ h),
            used: std::collections::HashSet::new(),
        }
    }

    fn word(&mut self) -> String {
        loop {
            let w: String = (0..8)
                .map(|_| (b'a' + self.rng.gen_range(0..26u8)) as char)
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn pool(&mut self, len: usize) -> Vec<String> {
        (0..len).map(|_| self.word()).collect()
    }
}

struct ThemePools {
    file_side: Vec<String>,
    team_side: Vec<String>,
}

fn theme_pools(spec: &SyntheticSpec, theme: usize, words: &mut WordGen) -> ThemePools {
    // proportioned deterministically so the planted fraction is stable
    // across seeds
    let non_lexical_themes = (spec.teams as f64 * spec.link_noise).round() as usize;
    let non_lexical = theme < non_lexical_themes;
    if non_lexical {
        ThemePools {
            file_side: words.pool(THEME_POOL),
            team_side: words.pool(THEME_POOL),
        }
    } else {
        let shared = words.pool(THEME_POOL);
        ThemePools {
            file_side: shared.clone(),
            team_side: shared,
        }
    }
}

fn description(
    pool: &[String],
    filler: &[String],
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
) -> String {
    use rand::seq::SliceRandom;
    let len = rng.gen_range(spec.desc_len.0..=spec.desc_len.1);
    // distinct theme tokens: two texts of one theme always overlap
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.partial_shuffle(rng, spec.theme_tokens_per_desc);
    let mut words: Vec<String> = order
        .iter()
        .take(spec.theme_tokens_per_desc)
        .map(|&i| pool[i].clone())
        .collect();
    while words.len() < len {
        words.push(filler[rng.gen_range(0..filler.len())].clone());
    }
    words.join(" ")
}

/// Generate the full bundle for a spec. Same spec, same bytes.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut words = WordGen::new(spec.seed, &spec.namespace);

    let filler = words.pool(spec.vocab_size);

    let mut artifacts = Vec::new();
    let mut edges = Vec::new();
    let mut team_of_file: Vec<(String, String)> = Vec::new(); // (file id, team id)
    let mut product_of_team: Vec<(String, String)> = Vec::new();

    // products first so the corpus declares them in one block
    let product_pools: Vec<Vec<String>> =
        (0..spec.products).map(|_| words.pool(THEME_POOL)).collect();
    let product_names: Vec<String> = (0..spec.products).map(|_| words.word()).collect();

    let mut team_descs: Vec<String> = Vec::new();
    let mut team_names: Vec<String> = Vec::new();
    let mut pools: Vec<ThemePools> = Vec::new();
    for t in 0..spec.teams {
        let theme = theme_pools(spec, t, &mut words);
        team_descs.push(description(&theme.team_side, &filler, spec, &mut rng));
        team_names.push(words.word());
        pools.push(theme);
    }

    for p in 0..spec.products {
        // a product shares a little vocabulary with its member teams
        let members: Vec<usize> = (0..spec.teams).filter(|t| t % spec.products == p).collect();
        let mut own = description(&product_pools[p], &filler, spec, &mut rng);
        for &t in members.iter().take(2) {
            own.push(' ');
            own.push_str(&pools[t].team_side[rng.gen_range(0..THEME_POOL)]);
        }
        artifacts.push(Artifact {
            id: ArtifactId::new(format!("prod-{}", product_names[p]))?,
            ty: ArtifactType::new(TYPE_PRODUCT),
            fields: vec![
                ("name".into(), product_names[p].clone()),
                ("description".into(), own),
            ],
        });
    }

    for t in 0..spec.teams {
        let team_id = format!("team-{}", team_names[t]);
        artifacts.push(Artifact {
            id: ArtifactId::new(&team_id)?,
            ty: ArtifactType::new(TYPE_ONCALL_TEAM),
            fields: vec![
                ("name".into(), team_names[t].clone()),
                ("charter".into(), team_descs[t].clone()),
            ],
        });
        let product_id = format!("prod-{}", product_names[t % spec.products]);
        edges.push(LinkEdge {
            src: ArtifactId::new(&team_id)?,
            dst: ArtifactId::new(&product_id)?,
            relation: "supports".into(),
        });
        product_of_team.push((team_id.clone(), product_id));

        let n_files = rng.gen_range(spec.files_per_team.0..=spec.files_per_team.1);
        for _ in 0..n_files {
            let file_word = words.word();
            let file_id = format!("file-{file_word}");
            let desc = description(&pools[t].file_side, &filler, spec, &mut rng);
            artifacts.push(Artifact {
                id: ArtifactId::new(&file_id)?,
                ty: ArtifactType::new(TYPE_CODE_PATH),
                fields: vec![("path".into(), file_word), ("summary".into(), desc)],
            });
            edges.push(LinkEdge {
                src: ArtifactId::new(&file_id)?,
                dst: ArtifactId::new(&team_id)?,
                relation: "owned_by".into(),
            });
            team_of_file.push((file_id, team_id.clone()));
        }
    }

    let corpus = Corpus::new(
        vec![
            ArtifactType::new(TYPE_CODE_PATH),
            ArtifactType::new(TYPE_ONCALL_TEAM),
            ArtifactType::new(TYPE_PRODUCT),
        ],
        artifacts,
        edges,
    )?;

    let bench = make_benchmark(spec, &corpus, &team_of_file, &product_of_team);
    let (catalog, projects) = make_catalog(spec, &filler, &mut words, &mut rng)?;
    let vocab = make_vocab(&filler);

    Ok(SyntheticBundle {
        corpus,
        bench,
        catalog,
        projects,
        vocab,
    })
}

fn make_benchmark(
    spec: &SyntheticSpec,
    corpus: &Corpus,
    team_of_file: &[(String, String)],
    product_of_team: &[(String, String)],
) -> KeywordBenchmark {
    // askers paste a little context from the artifact they are asking
    // about, the way a real ticket quotes the code or charter in question
    let context_of = |id: &str| -> String {
        let artifact = corpus
            .get(&ArtifactId::new(id).expect("generated ids are valid"))
            .expect("generated ids resolve");
        artifact
            .fields
            .last()
            .map(|(_, text)| {
                text.split_whitespace().take(3).collect::<Vec<_>>().join(" ")
            })
            .unwrap_or_default()
    };
    let mut items = Vec::with_capacity(spec.bench_questions);
    let file_questions = (spec.bench_questions * 2).div_ceil(3);
    let team_questions = spec.bench_questions - file_questions;
    // spread the probes across the corpus
    for q in 0..file_questions {
        let idx = q * team_of_file.len() / file_questions.max(1);
        let (file, team) = &team_of_file[idx];
        items.push((
            format!(
                "Which oncall team owns {file}? Context: {}",
                context_of(file)
            ),
            vec![team.to_lowercase()],
        ));
    }
    for q in 0..team_questions {
        let idx = q * product_of_team.len() / team_questions.max(1);
        let (team, product) = &product_of_team[idx];
        items.push((
            format!(
                "Which product does {team} support? Context: {}",
                context_of(team)
            ),
            vec![product.to_lowercase()],
        ));
    }
    KeywordBenchmark::new(items).expect("benchmark items are well-formed")
}

fn make_catalog(
    spec: &SyntheticSpec,
    filler: &[String],
    words: &mut WordGen,
    rng: &mut ChaCha8Rng,
) -> Result<(NodeCatalog, Vec<ProjectCase>)> {
    let parents = (spec.catalog_nodes / 10).max(1);
    let parent_tokens: Vec<Vec<String>> = (0..parents).map(|_| words.pool(3)).collect();

    let mut nodes = Vec::with_capacity(spec.catalog_nodes);
    let mut node_tokens: Vec<Vec<String>> = Vec::with_capacity(spec.catalog_nodes);
    for i in 0..spec.catalog_nodes {
        let parent = i % parents;
        let own = words.pool(4);
        let title = format!("{} {}", parent_tokens[parent][0], own[0]);
        let mut desc_words: Vec<String> = own.clone();
        desc_words.push(parent_tokens[parent][1].clone());
        desc_words.push(parent_tokens[parent][2].clone());
        for _ in 0..3 {
            desc_words.push(filler[rng.gen_range(0..filler.len())].clone());
        }
        let mut tokens = own;
        tokens.extend(parent_tokens[parent].iter().cloned());
        node_tokens.push(tokens);
        nodes.push(CatalogNode {
            id: format!("node-{}", words.word()),
            title,
            description: desc_words.join(" "),
        });
    }

    let mut projects = Vec::with_capacity(spec.catalog_projects);
    for q in 0..spec.catalog_projects {
        let target = q * spec.catalog_nodes / spec.catalog_projects.max(1);
        let tokens = &node_tokens[target];
        let mut words: Vec<String> = Vec::new();
        for token in tokens {
            if rng.gen_range(0.0..1.0) < 0.6 {
                words.push(token.clone());
            }
        }
        if words.is_empty() {
            words.push(tokens[0].clone());
        }
        // confusion: a token borrowed from a sibling node
        if rng.gen_range(0.0..1.0) < 0.3 {
            let sibling = (target + parents) % spec.catalog_nodes;
            words.push(node_tokens[sibling][0].clone());
        }
        for _ in 0..4 {
            words.push(filler[rng.gen_range(0..filler.len())].clone());
        }
        projects.push(ProjectCase {
            description: words.join(" "),
            node_id: nodes[target].id.clone(),
        });
    }
    Ok((NodeCatalog::new(nodes)?, projects))
}

fn make_vocab(filler: &[String]) -> Vec<String> {
    let mut vocab: Vec<String> = filler.to_vec();
    for word in [
        "which", "oncall", "team", "owns", "product", "does", "support", "what", "the",
        "find", "artifacts", "related", "explain", "connection", "say", "about",
        "context",
        TYPE_CODE_PATH, TYPE_ONCALL_TEAM, TYPE_PRODUCT, "name", "charter", "path",
        "summary", "description",
    ] {
        vocab.push(word.to_string());
    }
    vocab
}

/// File names written by [`write_bundle`].
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const BENCH_FILE: &str = "bench.jsonl";
pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const PROJECTS_FILE: &str = "projects.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";

/// Write the bundle into a directory as its five corpus files.
pub fn write_bundle(bundle: &SyntheticBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    crate::artifact::write_corpus(&bundle.corpus, dir.join(CORPUS_FILE))?;
    bundle.bench.save(dir.join(BENCH_FILE))?;
    crate::fetch::save_catalog(&bundle.catalog, dir.join(CATALOG_FILE))?;
    crate::fetch::save_projects(&bundle.projects, dir.join(PROJECTS_FILE))?;
    let mut vocab_out = Vec::new();
    for word in &bundle.vocab {
        writeln!(vocab_out, "{word}")?;
    }
    std::fs::write(dir.join(VOCAB_FILE), vocab_out)?;
    Ok(())
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path.as_ref())?
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}
