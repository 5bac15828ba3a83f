//! Contrastive fine-tuning of the adapters against the link graph.
//!
//! Each direct edge (and optionally each second-degree chain) becomes one
//! training example: the source artifact as query, the linked artifact as
//! positive, and k sampled same-type non-linked artifacts as hard
//! negatives. The objective is InfoNCE over raw dot products; optimization
//! is plain mini-batch gradient descent from identity adapters so runs are
//! bit-reproducible for a fixed seed.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{ArtifactId, Corpus, LinkEdge, LinkGraph, TypeTemplates};
use crate::embed::{dot, AdapterPair, BaseEncoder};
use crate::error::{PactError, Result};
use crate::matrix::SquareMatrix;

/// One contrastive example: query artifact, linked positive, k negatives of
/// the positive's type that are not linked to the query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query: ArtifactId,
    pub positive: ArtifactId,
    pub negatives: Vec<ArtifactId>,
    /// True when the pair came from a 2-hop chain rather than a direct edge.
    pub two_hop: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub include_two_hop: bool,
    pub in_batch_negatives: bool,
    /// Train : test parts, e.g. (5, 1).
    pub split_ratio: (u32, u32),
    pub two_hop_weight: f64,
    pub freeze_context: bool,
    /// Ridge pull of both adapters toward identity, applied per batch.
    /// Keeps the fine-tune light: directions the data never touches stay
    /// at identity, which is what protects out-of-domain retrieval.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            negatives_per_positive: 4,
            epochs: 30,
            learning_rate: 5.0,
            batch_size: 32,
            seed: 7,
            include_two_hop: true,
            in_batch_negatives: true,
            split_ratio: (5, 1),
            two_hop_weight: 1.0,
            freeze_context: false,
            weight_decay: 0.0125,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.negatives_per_positive < 1 {
            return Err(PactError::InvalidArgument(
                "negatives_per_positive must be >= 1".into(),
            ));
        }
        if self.learning_rate.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(PactError::InvalidArgument(
                "learning_rate must be positive".into(),
            ));
        }
        if self.split_ratio.0 == 0 || self.split_ratio.1 == 0 {
            return Err(PactError::InvalidArgument(
                "split ratio parts must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(PactError::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(PactError::InvalidArgument(
                "weight_decay must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministically partition edges into train and test sides with the
/// configured ratio. Disjoint and exhaustive; sizes match the ratio up to
/// rounding. Output order follows the input edge order.
pub fn split_edges(
    edges: &[LinkEdge],
    ratio: (u32, u32),
    seed: u64,
) -> (Vec<LinkEdge>, Vec<LinkEdge>) {
    let n = edges.len();
    let total = u64::from(ratio.0) + u64::from(ratio.1);
    let n_test = ((n as f64) * (f64::from(ratio.1) / total as f64)).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5b5a_d5ec_7e01_c3f5);
    order.shuffle(&mut rng);
    let test_set: HashSet<usize> = order.into_iter().take(n_test).collect();
    let mut train = Vec::with_capacity(n - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (i, edge) in edges.iter().enumerate() {
        if test_set.contains(&i) {
            test.push(edge.clone());
        } else {
            train.push(edge.clone());
        }
    }
    (train, test)
}

/// Build one example per direct edge, plus one per 2-hop pair when enabled.
/// Negatives are sampled uniformly without replacement from same-type
/// artifacts not linked to the query, using the seeded RNG; the result is
/// identical for a fixed seed.
pub fn build_examples(
    corpus: &Corpus,
    graph: &LinkGraph,
    cfg: &TrainConfig,
) -> Result<Vec<TrainingExample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut examples = Vec::new();

    let mut pairs: Vec<(ArtifactId, ArtifactId, bool)> = graph
        .edges()
        .iter()
        .map(|e| (e.src.clone(), e.dst.clone(), false))
        .collect();
    if cfg.include_two_hop {
        pairs.extend(
            graph
                .two_hop_pairs()
                .into_iter()
                .map(|(a, c)| (a, c, true)),
        );
    }

    for (query, positive, two_hop) in pairs {
        let target_ty = &corpus
            .get(&positive)
            .ok_or_else(|| PactError::UnknownNode {
                id: positive.as_str().to_string(),
            })?
            .ty;
        let candidates: Vec<ArtifactId> = corpus
            .artifacts_of_type(target_ty)
            .map(|a| a.id.clone())
            .filter(|id| id != &positive && id != &query && !graph.is_linked(&query, id))
            .collect();
        if candidates.len() < cfg.negatives_per_positive {
            return Err(PactError::NotEnoughNegatives {
                src: query.as_str().to_string(),
                dst: positive.as_str().to_string(),
                needed: cfg.negatives_per_positive,
                available: candidates.len(),
            });
        }
        let negatives = sample_without_replacement(&candidates, cfg.negatives_per_positive, &mut rng);
        examples.push(TrainingExample {
            query,
            positive,
            negatives,
            two_hop,
        });
    }
    Ok(examples)
}

fn sample_without_replacement(
    pool: &[ArtifactId],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ArtifactId> {
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    indices.partial_shuffle(rng, k);
    indices.truncate(k);
    indices.into_iter().map(|i| pool[i].clone()).collect()
}

/// InfoNCE: `-log(exp(s+) / (exp(s+) + sum_j exp(s-_j)))`, computed with a
/// max shift so scores up to |700| cannot overflow.
pub fn info_nce_loss(positive_score: f64, negative_scores: &[f64]) -> Result<f64> {
    if negative_scores.is_empty() {
        return Err(PactError::InvalidArgument(
            "InfoNCE needs at least one negative score".into(),
        ));
    }
    if !positive_score.is_finite() || negative_scores.iter().any(|s| !s.is_finite()) {
        return Err(PactError::NonFiniteScore);
    }
    let max = negative_scores
        .iter()
        .copied()
        .fold(positive_score, f64::max);
    let mut denom = (positive_score - max).exp();
    for s in negative_scores {
        denom += (s - max).exp();
    }
    Ok(-(positive_score - max) + denom.ln())
}

/// Softmax over `[positive, negatives...]` with the same max shift.
fn softmax_weights(positive_score: f64, negative_scores: &[f64]) -> Vec<f64> {
    let max = negative_scores
        .iter()
        .copied()
        .fold(positive_score, f64::max);
    let mut weights = Vec::with_capacity(negative_scores.len() + 1);
    weights.push((positive_score - max).exp());
    for s in negative_scores {
        weights.push((s - max).exp());
    }
    let z: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= z;
    }
    weights
}

/// Loss and exact analytic gradients for one example.
///
/// With `q = Q u` and `c_i = C v_i`, the score is `s_i = q . c_i` and the
/// loss gradient w.r.t. a score is `err_i = p_i - [i = positive]`. The two
/// adapter gradients factor into single rank-one updates:
///   dQ = (sum_i err_i c_i) u^T,   dC = q (sum_i err_i v_i)^T
/// Softmax weights are computed once and reused for both.
#[allow(clippy::too_many_arguments)]
fn example_gradient(
    query_base: &[f64],
    candidate_bases: &[&[f64]],
    mapped_candidates: &[&[f64]],
    adapters: &AdapterPair,
    d_query: Option<&mut SquareMatrix>,
    d_context: Option<&mut SquareMatrix>,
    weight: f64,
) -> Result<f64> {
    let qv = adapters.query.matvec(query_base);
    let scores: Vec<f64> = mapped_candidates.iter().map(|c| dot(&qv, c)).collect();
    let (positive_score, negative_scores) = scores.split_first().expect("candidates non-empty");
    let loss = info_nce_loss(*positive_score, negative_scores)?;
    if d_query.is_none() && d_context.is_none() {
        return Ok(loss);
    }
    let probs = softmax_weights(*positive_score, negative_scores);
    let dim = query_base.len();
    if let Some(d_query) = d_query {
        let mut combined = vec![0.0; dim];
        for (i, p) in probs.iter().enumerate() {
            let err = weight * (p - if i == 0 { 1.0 } else { 0.0 });
            for (slot, &c) in combined.iter_mut().zip(mapped_candidates[i]) {
                *slot += err * c;
            }
        }
        d_query.add_outer(1.0, &combined, query_base);
    }
    if let Some(d_context) = d_context {
        let mut combined = vec![0.0; dim];
        for (i, p) in probs.iter().enumerate() {
            let err = weight * (p - if i == 0 { 1.0 } else { 0.0 });
            for (slot, &v) in combined.iter_mut().zip(candidate_bases[i]) {
                *slot += err * v;
            }
        }
        d_context.add_outer(1.0, &qv, &combined);
    }
    Ok(loss)
}

/// Exact analytic gradient of the InfoNCE loss for one example, with
/// respect to both adapter matrices.
pub fn loss_gradient(
    example: &TrainingExample,
    corpus: &Corpus,
    templates: &TypeTemplates,
    enc: &BaseEncoder,
    adapters: &AdapterPair,
) -> Result<(SquareMatrix, SquareMatrix)> {
    let bases = encode_bases(corpus, templates, enc)?;
    let dim = enc.dim();
    let mut d_query = SquareMatrix::zeros(dim);
    let mut d_context = SquareMatrix::zeros(dim);
    let query_base = base_of(&bases, &example.query)?;
    let mut candidates: Vec<&[f64]> = vec![base_of(&bases, &example.positive)?];
    for id in &example.negatives {
        candidates.push(base_of(&bases, id)?);
    }
    let mapped: Vec<Vec<f64>> = candidates
        .iter()
        .map(|v| adapters.context.matvec(v))
        .collect();
    let mapped_refs: Vec<&[f64]> = mapped.iter().map(Vec::as_slice).collect();
    example_gradient(
        query_base,
        &candidates,
        &mapped_refs,
        adapters,
        Some(&mut d_query),
        Some(&mut d_context),
        1.0,
    )?;
    Ok((d_query, d_context))
}

fn encode_bases(
    corpus: &Corpus,
    templates: &TypeTemplates,
    enc: &BaseEncoder,
) -> Result<HashMap<ArtifactId, Vec<f64>>> {
    let texts = corpus.composed_texts(templates)?;
    let mut bases = HashMap::with_capacity(texts.len());
    for artifact in &corpus.artifacts {
        let text = &texts[&artifact.id];
        let emb = enc.encode(text)?;
        bases.insert(artifact.id.clone(), emb.0);
    }
    Ok(bases)
}

fn base_of<'a>(
    bases: &'a HashMap<ArtifactId, Vec<f64>>,
    id: &ArtifactId,
) -> Result<&'a [f64]> {
    bases
        .get(id)
        .map(Vec::as_slice)
        .ok_or_else(|| PactError::UnknownNode {
            id: id.as_str().to_string(),
        })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Training log: entry 0 is the loss before any update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub examples: usize,
    pub config: TrainConfig,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.epochs.first().map(|e| e.mean_loss).unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map(|e| e.mean_loss).unwrap_or(f64::NAN)
    }
}

/// Fine-tune adapters on the given graph with mini-batch gradient descent.
///
/// Examples are shuffled once and batched; the partition stays fixed across
/// epochs so the logged objective is deterministic. When in-batch negatives
/// are on, each example also scores the positives of the other same-type
/// examples in its batch as negatives.
pub fn train(
    corpus: &Corpus,
    graph: &LinkGraph,
    cfg: &TrainConfig,
    templates: &TypeTemplates,
    enc: &BaseEncoder,
) -> Result<(AdapterPair, TrainReport)> {
    let examples = build_examples(corpus, graph, cfg)?;
    train_on_examples(corpus, &examples, cfg, templates, enc)
}

/// Like [`train`] but over pre-built examples (used when the caller wants
/// control over the split).
pub fn train_on_examples(
    corpus: &Corpus,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    templates: &TypeTemplates,
    enc: &BaseEncoder,
) -> Result<(AdapterPair, TrainReport)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(PactError::InvalidArgument("no training examples".into()));
    }
    let bases = encode_bases(corpus, templates, enc)?;
    let dim = enc.dim();
    let mut adapters = AdapterPair::identity(dim);

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9f0e_33d1_4a1c_77ab);
    order.shuffle(&mut rng);
    let batches: Vec<Vec<usize>> = order
        .chunks(cfg.batch_size)
        .map(|c| c.to_vec())
        .collect();

    // candidate id lists per batch are fixed for the whole run
    let batch_candidates: Vec<Vec<Vec<ArtifactId>>> = batches
        .iter()
        .map(|batch| {
            batch
                .iter()
                .map(|&i| {
                    let ex = &examples[i];
                    let mut ids = vec![ex.positive.clone()];
                    ids.extend(ex.negatives.iter().cloned());
                    if cfg.in_batch_negatives {
                        let ty = &corpus.get(&ex.positive).expect("validated").ty;
                        for &j in batch {
                            if j == i {
                                continue;
                            }
                            let other = &examples[j].positive;
                            if &corpus.get(other).expect("validated").ty == ty
                                && !ids.contains(other)
                            {
                                ids.push(other.clone());
                            }
                        }
                    }
                    ids
                })
                .collect()
        })
        .collect();

    // context matvecs re-used across a batch (the context matrix is fixed
    // within one batch step)
    let map_batch = |adapters: &AdapterPair,
                     candidates: &[Vec<ArtifactId>]|
     -> Result<HashMap<ArtifactId, Vec<f64>>> {
        let mut mapped = HashMap::new();
        for ids in candidates {
            for id in ids {
                if !mapped.contains_key(id) {
                    mapped.insert(id.clone(), adapters.context.matvec(base_of(&bases, id)?));
                }
            }
        }
        Ok(mapped)
    };

    let mean_loss = |adapters: &AdapterPair| -> Result<f64> {
        let mut total = 0.0;
        for (batch, candidates) in batches.iter().zip(&batch_candidates) {
            let mapped = map_batch(adapters, candidates)?;
            for (&i, ids) in batch.iter().zip(candidates) {
                let cands: Vec<&[f64]> = ids
                    .iter()
                    .map(|id| base_of(&bases, id))
                    .collect::<Result<_>>()?;
                let mapped_refs: Vec<&[f64]> =
                    ids.iter().map(|id| mapped[id].as_slice()).collect();
                total += example_gradient(
                    base_of(&bases, &examples[i].query)?,
                    &cands,
                    &mapped_refs,
                    adapters,
                    None,
                    None,
                    0.0,
                )?;
            }
        }
        Ok(total / examples.len() as f64)
    };

    let mut report = TrainReport {
        epochs: vec![EpochStats {
            epoch: 0,
            mean_loss: mean_loss(&adapters)?,
        }],
        examples: examples.len(),
        config: cfg.clone(),
    };

    for epoch in 1..=cfg.epochs {
        for (batch, candidates) in batches.iter().zip(&batch_candidates) {
            let mapped = map_batch(&adapters, candidates)?;
            let mut d_query = SquareMatrix::zeros(dim);
            let mut d_context = SquareMatrix::zeros(dim);
            let mut weight_sum = 0.0;
            for (&i, ids) in batch.iter().zip(candidates) {
                let ex = &examples[i];
                let weight = if ex.two_hop { cfg.two_hop_weight } else { 1.0 };
                let cands: Vec<&[f64]> = ids
                    .iter()
                    .map(|id| base_of(&bases, id))
                    .collect::<Result<_>>()?;
                let mapped_refs: Vec<&[f64]> =
                    ids.iter().map(|id| mapped[id].as_slice()).collect();
                example_gradient(
                    base_of(&bases, &ex.query)?,
                    &cands,
                    &mapped_refs,
                    &adapters,
                    Some(&mut d_query),
                    (!cfg.freeze_context).then_some(&mut d_context),
                    weight,
                )?;
                weight_sum += weight;
            }
            if weight_sum > 0.0 {
                adapters.query.axpy(-cfg.learning_rate / weight_sum, &d_query);
                if !cfg.freeze_context {
                    adapters
                        .context
                        .axpy(-cfg.learning_rate / weight_sum, &d_context);
                }
                if cfg.weight_decay > 0.0 {
                    decay_toward_identity(&mut adapters.query, cfg.learning_rate * cfg.weight_decay);
                    if !cfg.freeze_context {
                        decay_toward_identity(
                            &mut adapters.context,
                            cfg.learning_rate * cfg.weight_decay,
                        );
                    }
                }
            }
        }
        let loss = mean_loss(&adapters)?;
        if !loss.is_finite() {
            return Err(PactError::TrainingDiverged { epoch });
        }
        report.epochs.push(EpochStats {
            epoch,
            mean_loss: loss,
        });
    }
    Ok((adapters, report))
}

/// `m <- m - step * (m - I)`.
fn decay_toward_identity(m: &mut SquareMatrix, step: f64) {
    let dim = m.dim();
    for row in 0..dim {
        for col in 0..dim {
            let target = if row == col { 1.0 } else { 0.0 };
            let v = m.get(row, col);
            m.set(row, col, v - step * (v - target));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::{Artifact, ArtifactType};
    use proptest::prelude::*;
    use rand::Rng;

    fn id(s: &str) -> ArtifactId {
        ArtifactId::new(s).unwrap()
    }

    fn team_corpus(n_teams: usize) -> Corpus {
        let mut artifacts = vec![Artifact {
            id: id("file-0"),
            ty: ArtifactType::new("code_path"),
            fields: vec![("path".into(), "pay route handler".into())],
        }];
        for i in 0..n_teams {
            artifacts.push(Artifact {
                id: id(&format!("team-{i}")),
                ty: ArtifactType::new("oncall_team"),
                fields: vec![("name".into(), format!("team number {i}"))],
            });
        }
        Corpus::new(
            vec![ArtifactType::new("code_path"), ArtifactType::new("oncall_team")],
            artifacts,
            vec![LinkEdge {
                src: id("file-0"),
                dst: id("team-0"),
                relation: "owned_by".into(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn forced_negative_sample() {
        // 1 edge, 5 teams, k=4: the 4 non-linked teams are the negatives
        let corpus = team_corpus(5);
        let cfg = TrainConfig {
            include_two_hop: false,
            ..TrainConfig::default()
        };
        let examples = build_examples(&corpus, &corpus.graph, &cfg).unwrap();
        assert_eq!(examples.len(), 1);
        let mut negs: Vec<&str> = examples[0].negatives.iter().map(|n| n.as_str()).collect();
        negs.sort_unstable();
        assert_eq!(negs, vec!["team-1", "team-2", "team-3", "team-4"]);
    }

    #[test]
    fn not_enough_negatives_names_the_edge() {
        let corpus = team_corpus(3);
        let cfg = TrainConfig {
            include_two_hop: false,
            ..TrainConfig::default()
        };
        match build_examples(&corpus, &corpus.graph, &cfg) {
            Err(PactError::NotEnoughNegatives { src, dst, .. }) => {
                assert_eq!(src, "file-0");
                assert_eq!(dst, "team-0");
            }
            other => panic!("expected NotEnoughNegatives, got {other:?}"),
        }
    }

    #[test]
    fn two_hop_flag_controls_extra_examples() {
        let mut artifacts = Vec::new();
        for (idx, (prefix, ty)) in [("a", "t1"), ("b", "t2"), ("c", "t3")].iter().enumerate() {
            for i in 0..6 {
                artifacts.push(Artifact {
                    id: id(&format!("{prefix}-{i}")),
                    ty: ArtifactType::new(*ty),
                    fields: vec![("name".into(), format!("{prefix} {idx} {i}"))],
                });
            }
        }
        let corpus = Corpus::new(
            vec![
                ArtifactType::new("t1"),
                ArtifactType::new("t2"),
                ArtifactType::new("t3"),
            ],
            artifacts,
            vec![
                LinkEdge {
                    src: id("a-0"),
                    dst: id("b-0"),
                    relation: "r".into(),
                },
                LinkEdge {
                    src: id("b-0"),
                    dst: id("c-0"),
                    relation: "r".into(),
                },
            ],
        )
        .unwrap();
        let off = TrainConfig {
            include_two_hop: false,
            ..TrainConfig::default()
        };
        assert_eq!(build_examples(&corpus, &corpus.graph, &off).unwrap().len(), 2);
        let on = TrainConfig::default();
        let with_two_hop = build_examples(&corpus, &corpus.graph, &on).unwrap();
        assert_eq!(with_two_hop.len(), 3);
        assert!(with_two_hop[2].two_hop);
        assert_eq!(with_two_hop[2].query, id("a-0"));
        assert_eq!(with_two_hop[2].positive, id("c-0"));
    }

    #[test]
    fn build_examples_is_deterministic() {
        let corpus = team_corpus(10);
        let cfg = TrainConfig::default();
        let a = build_examples(&corpus, &corpus.graph, &cfg).unwrap();
        let b = build_examples(&corpus, &corpus.graph, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn info_nce_uniform_scores() {
        // all scores equal with k=4 forces a uniform softmax: loss = ln 5
        let loss = info_nce_loss(2.5, &[2.5; 4]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!((loss - 1.6094379).abs() < 1e-7);
    }

    #[test]
    fn info_nce_separated_scores() {
        // closed form checked against high-precision evaluation of
        // ln(1 + exp(-20))
        let loss = info_nce_loss(10.0, &[-10.0]).unwrap();
        assert!((loss - 2.0611536181902037e-9).abs() < 1e-15);
    }

    #[test]
    fn info_nce_monotone_in_positive_score() {
        let negatives = [0.3, -0.2, 1.0];
        let mut prev = f64::INFINITY;
        for s in [-5.0, -1.0, 0.0, 1.0, 5.0, 20.0] {
            let loss = info_nce_loss(s, &negatives).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        // loss -> 0 once s+ dominates (saturates to exactly 0 in f64)
        let saturated = info_nce_loss(700.0, &negatives).unwrap();
        assert!(saturated <= prev);
        assert!(saturated < 1e-12);
    }

    #[test]
    fn info_nce_no_overflow_at_700() {
        let loss = info_nce_loss(700.0, &[-700.0, 700.0]).unwrap();
        assert!(loss.is_finite());
    }

    #[test]
    fn info_nce_rejects_non_finite() {
        assert!(matches!(
            info_nce_loss(f64::NAN, &[0.0]),
            Err(PactError::NonFiniteScore)
        ));
        assert!(matches!(
            info_nce_loss(0.0, &[f64::INFINITY]),
            Err(PactError::NonFiniteScore)
        ));
    }

    proptest! {
        #[test]
        fn info_nce_nonnegative_and_shift_invariant(
            pos in -50.0..50.0f64,
            negs in proptest::collection::vec(-50.0..50.0f64, 1..8),
            shift in -100.0..100.0f64,
        ) {
            let loss = info_nce_loss(pos, &negs).unwrap();
            prop_assert!(loss >= 0.0);
            let shifted: Vec<f64> = negs.iter().map(|s| s + shift).collect();
            let shifted_loss = info_nce_loss(pos + shift, &shifted).unwrap();
            prop_assert!((loss - shifted_loss).abs() < 1e-9);
        }
    }

    #[test]
    fn info_nce_equals_ln_k_plus_1_iff_all_equal() {
        let k = 6;
        let equal = info_nce_loss(1.3, &vec![1.3; k]).unwrap();
        assert!((equal - ((k + 1) as f64).ln()).abs() < 1e-12);
        let unequal = info_nce_loss(1.3, &[1.3, 1.3, 1.2, 1.3, 1.3, 1.3]).unwrap();
        assert!((unequal - 7f64.ln()).abs() > 1e-6);
    }

    /// Hand derivation for D=2, k=1, zero adapters: all scores are 0, the
    /// softmax is uniform (1/2 each), so
    ///   dQ = 0 (mapped candidates are zero vectors)
    ///   dC = 0 (mapped query is the zero vector)
    #[test]
    fn gradient_zero_adapters_matches_hand_derivation() {
        let corpus = team_corpus(5);
        let templates = TypeTemplates::from_corpus(&corpus);
        let enc = BaseEncoder::feature_hash(2, 7);
        let adapters = AdapterPair {
            query: SquareMatrix::zeros(2),
            context: SquareMatrix::zeros(2),
        };
        let example = TrainingExample {
            query: id("file-0"),
            positive: id("team-0"),
            negatives: vec![id("team-1")],
            two_hop: false,
        };
        let (d_q, d_c) = loss_gradient(&example, &corpus, &templates, &enc, &adapters).unwrap();
        assert!(d_q.data().iter().all(|&x| x == 0.0));
        assert!(d_c.data().iter().all(|&x| x == 0.0));
        // identity adapters: same uniform softmax weights, now non-zero
        // outer products; check against the closed form for one entry.
        let identity = AdapterPair::identity(2);
        let (d_q, _) = loss_gradient(&example, &corpus, &templates, &enc, &identity).unwrap();
        let u = enc
            .encode(&compose_of(&corpus, &templates, "file-0"))
            .unwrap();
        let v_pos = enc
            .encode(&compose_of(&corpus, &templates, "team-0"))
            .unwrap();
        let v_neg = enc
            .encode(&compose_of(&corpus, &templates, "team-1"))
            .unwrap();
        let s_pos = dot(u.values(), v_pos.values());
        let s_neg = dot(u.values(), v_neg.values());
        let z = s_pos.exp() + s_neg.exp();
        let p_pos = s_pos.exp() / z;
        let p_neg = s_neg.exp() / z;
        let want_00 = (p_pos - 1.0) * v_pos.values()[0] * u.values()[0]
            + p_neg * v_neg.values()[0] * u.values()[0];
        assert!((d_q.get(0, 0) - want_00).abs() < 1e-12);
    }

    fn compose_of(corpus: &Corpus, templates: &TypeTemplates, which: &str) -> String {
        crate::artifact::compose_text(corpus.get(&id(which)).unwrap(), templates).unwrap()
    }

    /// Central finite differences oracle: relative Frobenius error < 1e-5
    /// on random D=8, k=4 instances.
    #[test]
    fn gradient_matches_finite_differences() {
        let corpus = team_corpus(8);
        let templates = TypeTemplates::from_corpus(&corpus);
        let enc = BaseEncoder::feature_hash(8, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..5 {
            let adapters = random_adapters(8, &mut rng);
            let example = TrainingExample {
                query: id("file-0"),
                positive: id(&format!("team-{}", trial % 8)),
                negatives: (0..4)
                    .map(|j| id(&format!("team-{}", (trial + j + 1) % 8)))
                    .collect(),
                two_hop: false,
            };
            let (d_q, d_c) = loss_gradient(&example, &corpus, &templates, &enc, &adapters).unwrap();
            let (fd_q, fd_c) =
                finite_difference_gradient(&example, &corpus, &templates, &enc, &adapters, 1e-5);
            assert!(relative_frobenius_error(&d_q, &fd_q) < 1e-5);
            assert!(relative_frobenius_error(&d_c, &fd_c) < 1e-5);
        }
    }

    pub(crate) fn random_adapters(dim: usize, rng: &mut ChaCha8Rng) -> AdapterPair {
        AdapterPair {
            query: SquareMatrix::from_rows(
                dim,
                (0..dim * dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            ),
            context: SquareMatrix::from_rows(
                dim,
                (0..dim * dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            ),
        }
    }

    pub(crate) fn example_loss(
        example: &TrainingExample,
        corpus: &Corpus,
        templates: &TypeTemplates,
        enc: &BaseEncoder,
        adapters: &AdapterPair,
    ) -> f64 {
        let u = enc
            .encode(&crate::artifact::compose_text(corpus.get(&example.query).unwrap(), templates).unwrap())
            .unwrap();
        let qv = adapters.query.matvec(u.values());
        let score = |aid: &ArtifactId| {
            let v = enc
                .encode(&crate::artifact::compose_text(corpus.get(aid).unwrap(), templates).unwrap())
                .unwrap();
            dot(&qv, &adapters.context.matvec(v.values()))
        };
        let pos = score(&example.positive);
        let negs: Vec<f64> = example.negatives.iter().map(&score).collect();
        info_nce_loss(pos, &negs).unwrap()
    }

    pub(crate) fn finite_difference_gradient(
        example: &TrainingExample,
        corpus: &Corpus,
        templates: &TypeTemplates,
        enc: &BaseEncoder,
        adapters: &AdapterPair,
        h: f64,
    ) -> (SquareMatrix, SquareMatrix) {
        let dim = adapters.dim();
        let mut fd_q = SquareMatrix::zeros(dim);
        let mut fd_c = SquareMatrix::zeros(dim);
        for row in 0..dim {
            for col in 0..dim {
                let mut plus = adapters.clone();
                plus.query.set(row, col, plus.query.get(row, col) + h);
                let mut minus = adapters.clone();
                minus.query.set(row, col, minus.query.get(row, col) - h);
                let d = (example_loss(example, corpus, templates, enc, &plus)
                    - example_loss(example, corpus, templates, enc, &minus))
                    / (2.0 * h);
                fd_q.set(row, col, d);

                let mut plus = adapters.clone();
                plus.context.set(row, col, plus.context.get(row, col) + h);
                let mut minus = adapters.clone();
                minus.context.set(row, col, minus.context.get(row, col) - h);
                let d = (example_loss(example, corpus, templates, enc, &plus)
                    - example_loss(example, corpus, templates, enc, &minus))
                    / (2.0 * h);
                fd_c.set(row, col, d);
            }
        }
        (fd_q, fd_c)
    }

    pub(crate) fn relative_frobenius_error(a: &SquareMatrix, b: &SquareMatrix) -> f64 {
        let mut diff = a.clone();
        diff.axpy(-1.0, b);
        diff.frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn zero_epochs_leaves_identity() {
        let corpus = team_corpus(6);
        let templates = TypeTemplates::from_corpus(&corpus);
        let enc = BaseEncoder::feature_hash(16, 7);
        let cfg = TrainConfig {
            epochs: 0,
            include_two_hop: false,
            ..TrainConfig::default()
        };
        let (adapters, report) = train(&corpus, &corpus.graph, &cfg, &templates, &enc).unwrap();
        assert_eq!(adapters, AdapterPair::identity(16));
        assert_eq!(report.epochs.len(), 1);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let corpus = team_corpus(8);
        let templates = TypeTemplates::from_corpus(&corpus);
        let enc = BaseEncoder::feature_hash(16, 7);
        let cfg = TrainConfig {
            epochs: 5,
            include_two_hop: false,
            ..TrainConfig::default()
        };
        let (a1, r1) = train(&corpus, &corpus.graph, &cfg, &templates, &enc).unwrap();
        let (a2, r2) = train(&corpus, &corpus.graph, &cfg, &templates, &enc).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }

    #[test]
    fn training_reduces_loss() {
        let corpus = team_corpus(10);
        let templates = TypeTemplates::from_corpus(&corpus);
        let enc = BaseEncoder::feature_hash(16, 7);
        let cfg = TrainConfig {
            epochs: 10,
            learning_rate: 0.2,
            include_two_hop: false,
            ..TrainConfig::default()
        };
        let (_, report) = train(&corpus, &corpus.graph, &cfg, &templates, &enc).unwrap();
        assert!(report.final_loss() < report.initial_loss());
    }

    #[test]
    fn split_is_disjoint_exhaustive_with_ratio() {
        let edges: Vec<LinkEdge> = (0..120)
            .map(|i| LinkEdge {
                src: id(&format!("s{i}")),
                dst: id(&format!("d{i}")),
                relation: "r".into(),
            })
            .collect();
        let (train, test) = split_edges(&edges, (5, 1), 7);
        assert_eq!(train.len() + test.len(), edges.len());
        let expected_test = (120.0 / 6.0_f64).round() as i64;
        assert!((test.len() as i64 - expected_test).abs() <= 1);
        let train_set: HashSet<_> = train.iter().collect();
        assert!(test.iter().all(|e| !train_set.contains(e)));
        // deterministic
        let (train2, test2) = split_edges(&edges, (5, 1), 7);
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }
}
