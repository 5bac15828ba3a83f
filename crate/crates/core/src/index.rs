//! Vector index over context embeddings: exact and product-quantized
//! top-k similarity search, with binary persistence.
//!
//! PQ codebooks are trained per subspace with seeded k-means (k-means++
//! init, Lloyd iterations, empty clusters re-seeded to the farthest
//! point). Queries score quantized entries through per-subspace
//! inner-product lookup tables, so the table score of an entry equals the
//! dot product of the query with the entry's reconstructed vector; the
//! optional rerank pass re-scores the top 4k candidates exactly.

use std::collections::BTreeSet;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::artifact::{ArtifactId, ArtifactType, Corpus, TypeTemplates};
use crate::embed::{
    dot, encode_context, read_u32, read_u64, write_u32, write_u64, AdapterPair, BaseEncoder,
    Embedding,
};
use crate::error::{PactError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: ArtifactId,
    pub ty: ArtifactType,
    pub vector: Vec<f64>,
}

/// Per-subspace centroids plus one code byte per entry per subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    pub m: usize,
    pub ksub: usize,
    /// Subspace dimension `D / m`.
    pub dsub: usize,
    /// `m * ksub * dsub`, subspace-major then centroid-major.
    pub centroids: Vec<f64>,
    /// `n * m` code bytes, entry-major.
    pub codes: Vec<u8>,
}

impl PqCodebook {
    #[inline]
    fn centroid(&self, sub: usize, code: usize) -> &[f64] {
        let start = (sub * self.ksub + code) * self.dsub;
        &self.centroids[start..start + self.dsub]
    }

    pub fn entry_codes(&self, entry: usize) -> &[u8] {
        &self.codes[entry * self.m..(entry + 1) * self.m]
    }

    /// Decode entry `entry` back to a full vector.
    pub fn reconstruct(&self, entry: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.m * self.dsub);
        for (sub, &code) in self.entry_codes(entry).iter().enumerate() {
            out.extend_from_slice(self.centroid(sub, code as usize));
        }
        out
    }

    /// Mean squared quantization error over the given vectors.
    pub fn mean_squared_error(&self, vectors: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for (i, v) in vectors.iter().enumerate() {
            let rec = self.reconstruct(i);
            total += v
                .iter()
                .zip(rec.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        total / vectors.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexMode {
    Exact,
    Pq,
    /// PQ with the exact vectors dropped (`rerank` unavailable).
    PqDropped,
}

/// Embeddings for all artifacts, in corpus order.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    pub dim: usize,
    pub encoder_seed: u64,
    pub adapter_checksum: u64,
    entries: Vec<IndexEntry>,
    pq: Option<PqCodebook>,
    exact_dropped: bool,
}

/// One ranked search hit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHit {
    pub id: ArtifactId,
    pub ty: ArtifactType,
    pub score: f64,
}

impl VectorIndex {
    /// Encode every artifact with the context adapter, in corpus order.
    pub fn build_exact(
        corpus: &Corpus,
        templates: &TypeTemplates,
        enc: &BaseEncoder,
        adapters: &AdapterPair,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(PactError::EmptyIndex);
        }
        let mut entries = Vec::with_capacity(corpus.len());
        for artifact in &corpus.artifacts {
            let vector = encode_context(artifact, templates, enc, adapters).map_err(|e| {
                PactError::InvalidArgument(format!("encoding `{}` failed: {e}", artifact.id))
            })?;
            entries.push(IndexEntry {
                id: artifact.id.clone(),
                ty: artifact.ty.clone(),
                vector: vector.0,
            });
        }
        Ok(Self {
            dim: enc.dim(),
            encoder_seed: enc.seed(),
            adapter_checksum: adapters.checksum(),
            entries,
            pq: None,
            exact_dropped: false,
        })
    }

    /// Build directly from vectors (synthetic benchmarks, tests).
    pub fn from_vectors(
        items: Vec<(ArtifactId, ArtifactType, Vec<f64>)>,
        encoder_seed: u64,
        adapter_checksum: u64,
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(PactError::EmptyIndex);
        }
        let dim = items[0].2.len();
        let mut seen = BTreeSet::new();
        let mut entries = Vec::with_capacity(items.len());
        for (id, ty, vector) in items {
            if vector.len() != dim {
                return Err(PactError::DimMismatch {
                    left: vector.len(),
                    right: dim,
                });
            }
            if !seen.insert(id.clone()) {
                return Err(PactError::InvalidArgument(format!(
                    "duplicate index id `{id}`"
                )));
            }
            entries.push(IndexEntry { id, ty, vector });
        }
        Ok(Self {
            dim,
            encoder_seed,
            adapter_checksum,
            entries,
            pq: None,
            exact_dropped: false,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn mode(&self) -> IndexMode {
        match (&self.pq, self.exact_dropped) {
            (None, _) => IndexMode::Exact,
            (Some(_), false) => IndexMode::Pq,
            (Some(_), true) => IndexMode::PqDropped,
        }
    }

    pub fn codebook(&self) -> Option<&PqCodebook> {
        self.pq.as_ref()
    }

    /// True when `adapters` matches the checksum recorded at build time.
    pub fn adapters_match(&self, adapters: &AdapterPair) -> bool {
        adapters.checksum() == self.adapter_checksum
    }

    /// Train a PQ codebook on this index's vectors and attach it.
    pub fn train_pq(&mut self, m: usize, ksub: usize, iters: usize, seed: u64) -> Result<()> {
        let codebook = train_pq(self, m, ksub, iters, seed)?;
        self.pq = Some(codebook);
        Ok(())
    }

    /// Drop exact vectors, keeping only PQ codes (memory experiments).
    pub fn drop_exact(&mut self) -> Result<()> {
        if self.pq.is_none() {
            return Err(PactError::InvalidArgument(
                "cannot drop exact vectors without a PQ codebook".into(),
            ));
        }
        for entry in self.entries.iter_mut() {
            entry.vector = Vec::new();
        }
        self.exact_dropped = true;
        Ok(())
    }

    /// Top-k entries by similarity to `query`.
    ///
    /// Exact mode ranks true dot products. PQ mode scores through the
    /// lookup tables and, when `rerank` is on, re-scores the top `4k` PQ
    /// candidates exactly. Ties break by ascending id; `filter` restricts
    /// candidates by type before ranking.
    pub fn search_top_k(
        &self,
        query: &Embedding,
        k: usize,
        filter: Option<&BTreeSet<ArtifactType>>,
        rerank: bool,
    ) -> Result<Vec<ScoredHit>> {
        if self.entries.is_empty() {
            return Err(PactError::EmptyIndex);
        }
        if k < 1 {
            return Err(PactError::InvalidArgument("k must be >= 1".into()));
        }
        if query.dim() != self.dim {
            return Err(PactError::DimMismatch {
                left: query.dim(),
                right: self.dim,
            });
        }
        let allowed = |entry: &IndexEntry| filter.is_none_or(|set| set.contains(&entry.ty));
        match self.mode() {
            IndexMode::Exact => {
                let mut scored: Vec<(usize, f64)> = self
                    .entries
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| allowed(e))
                    .map(|(i, e)| (i, dot(query.values(), &e.vector)))
                    .collect();
                Ok(self.take_top(scored.as_mut_slice(), k))
            }
            IndexMode::Pq | IndexMode::PqDropped => {
                let codebook = self.pq.as_ref().expect("pq mode");
                if rerank && self.exact_dropped {
                    return Err(PactError::ExactVectorsDropped);
                }
                let tables = lookup_tables(codebook, query.values());
                let mut scored: Vec<(usize, f64)> = self
                    .entries
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| allowed(e))
                    .map(|(i, _)| {
                        let codes = codebook.entry_codes(i);
                        let mut s = 0.0;
                        for (sub, &code) in codes.iter().enumerate() {
                            s += tables[sub * codebook.ksub + code as usize];
                        }
                        (i, s)
                    })
                    .collect();
                if rerank {
                    self.sort_scored(scored.as_mut_slice());
                    let mut rescored: Vec<(usize, f64)> = scored
                        .iter()
                        .take(4 * k)
                        .map(|&(i, _)| (i, dot(query.values(), &self.entries[i].vector)))
                        .collect();
                    Ok(self.take_top(rescored.as_mut_slice(), k))
                } else {
                    Ok(self.take_top(scored.as_mut_slice(), k))
                }
            }
        }
    }

    fn sort_scored(&self, scored: &mut [(usize, f64)]) {
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| self.entries[a.0].id.cmp(&self.entries[b.0].id))
        });
    }

    fn take_top(&self, scored: &mut [(usize, f64)], k: usize) -> Vec<ScoredHit> {
        self.sort_scored(scored);
        scored
            .iter()
            .take(k)
            .map(|&(i, score)| ScoredHit {
                id: self.entries[i].id.clone(),
                ty: self.entries[i].ty.clone(),
                score,
            })
            .collect()
    }
}

/// Per-subspace inner products of the query against every centroid,
/// flattened `m * ksub`.
fn lookup_tables(codebook: &PqCodebook, query: &[f64]) -> Vec<f64> {
    let mut tables = vec![0.0; codebook.m * codebook.ksub];
    for sub in 0..codebook.m {
        let q_sub = &query[sub * codebook.dsub..(sub + 1) * codebook.dsub];
        for code in 0..codebook.ksub {
            tables[sub * codebook.ksub + code] = dot(q_sub, codebook.centroid(sub, code));
        }
    }
    tables
}

/// Train a product-quantization codebook over the index's vectors.
pub fn train_pq(
    index: &VectorIndex,
    m: usize,
    ksub: usize,
    iters: usize,
    seed: u64,
) -> Result<PqCodebook> {
    let dim = index.dim;
    let n = index.len();
    if m == 0 || !dim.is_multiple_of(m) {
        return Err(PactError::BadSubspaceCount { m, dim });
    }
    if n < ksub {
        return Err(PactError::TooFewVectors {
            needed: ksub,
            available: n,
        });
    }
    if index.exact_dropped {
        return Err(PactError::ExactVectorsDropped);
    }
    let dsub = dim / m;
    let mut centroids = vec![0.0; m * ksub * dsub];
    let mut codes = vec![0u8; n * m];

    for sub in 0..m {
        // independent RNG stream per subspace
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (sub as u64).wrapping_mul(0x9e37_79b9));
        let points: Vec<&[f64]> = index
            .entries
            .iter()
            .map(|e| &e.vector[sub * dsub..(sub + 1) * dsub])
            .collect();
        let sub_centroids = kmeans(&points, ksub, iters, &mut rng);
        let base = sub * ksub * dsub;
        centroids[base..base + ksub * dsub].copy_from_slice(&sub_centroids);
        // final assignment against the final centroids
        for (i, p) in points.iter().enumerate() {
            codes[i * m + sub] = nearest_centroid(p, &sub_centroids, ksub, dsub) as u8;
        }
    }
    Ok(PqCodebook {
        m,
        ksub,
        dsub,
        centroids,
        codes,
    })
}

fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn nearest_centroid(point: &[f64], centroids: &[f64], ksub: usize, dsub: usize) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for c in 0..ksub {
        let d = squared_l2(point, &centroids[c * dsub..(c + 1) * dsub]);
        if d < best_dist {
            best_dist = d;
            best = c;
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ initialization. Empty clusters are
/// re-seeded to the point farthest from its assigned centroid.
fn kmeans(points: &[&[f64]], ksub: usize, iters: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dsub = points[0].len();
    let n = points.len();
    let mut centroids = vec![0.0; ksub * dsub];

    // k-means++ seeding
    let first = rng.gen_range(0..n);
    centroids[..dsub].copy_from_slice(points[first]);
    let mut min_dist: Vec<f64> = points
        .iter()
        .map(|p| squared_l2(p, &centroids[..dsub]))
        .collect();
    for c in 1..ksub {
        let total: f64 = min_dist.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, d) in min_dist.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids[c * dsub..(c + 1) * dsub].copy_from_slice(points[chosen]);
        for (i, p) in points.iter().enumerate() {
            let d = squared_l2(p, points[chosen]);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..iters {
        // assign
        for (i, p) in points.iter().enumerate() {
            assignment[i] = nearest_centroid(p, &centroids, ksub, dsub);
        }
        // update
        let mut sums = vec![0.0; ksub * dsub];
        let mut counts = vec![0usize; ksub];
        for (i, p) in points.iter().enumerate() {
            let c = assignment[i];
            counts[c] += 1;
            for (slot, &x) in sums[c * dsub..(c + 1) * dsub].iter_mut().zip(p.iter()) {
                *slot += x;
            }
        }
        for c in 0..ksub {
            if counts[c] > 0 {
                for (slot, &s) in centroids[c * dsub..(c + 1) * dsub]
                    .iter_mut()
                    .zip(&sums[c * dsub..(c + 1) * dsub])
                {
                    *slot = s / counts[c] as f64;
                }
            }
        }
        // re-seed empty clusters to the farthest point
        let empties: Vec<usize> = (0..ksub).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut dist: Vec<(usize, f64)> = points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    (
                        i,
                        squared_l2(
                            p,
                            &centroids[assignment[i] * dsub..(assignment[i] + 1) * dsub],
                        ),
                    )
                })
                .collect();
            dist.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
            for (rank, c) in empties.into_iter().enumerate() {
                let (i, _) = dist[rank % n];
                centroids[c * dsub..(c + 1) * dsub].copy_from_slice(points[i]);
            }
        }
    }
    centroids
}

const INDEX_MAGIC: &[u8; 8] = b"PACTIDX1";

/// Serialize: magic, header (D u32, n u64, mode u8, m u32, ksub u32,
/// encoder seed u64, adapter checksum u64), id table (length-prefixed
/// UTF-8 id and type per entry), vectors row-major f64, then the optional
/// codebook and codes. Little-endian throughout.
pub fn save_index(index: &VectorIndex, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    w.write_all(INDEX_MAGIC)?;
    write_u32(&mut w, index.dim as u32)?;
    write_u64(&mut w, index.len() as u64)?;
    let mode_byte = match index.mode() {
        IndexMode::Exact => 0u8,
        IndexMode::Pq => 1,
        IndexMode::PqDropped => 2,
    };
    w.write_all(&[mode_byte])?;
    let (m, ksub) = index
        .pq
        .as_ref()
        .map_or((0, 0), |c| (c.m as u32, c.ksub as u32));
    write_u32(&mut w, m)?;
    write_u32(&mut w, ksub)?;
    write_u64(&mut w, index.encoder_seed)?;
    write_u64(&mut w, index.adapter_checksum)?;
    for entry in &index.entries {
        let id = entry.id.as_str().as_bytes();
        write_u32(&mut w, id.len() as u32)?;
        w.write_all(id)?;
        let ty = entry.ty.as_str().as_bytes();
        write_u32(&mut w, ty.len() as u32)?;
        w.write_all(ty)?;
    }
    if !index.exact_dropped {
        for entry in &index.entries {
            for v in &entry.vector {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    if let Some(codebook) = &index.pq {
        for v in &codebook.centroids {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&codebook.codes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<VectorIndex> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != INDEX_MAGIC {
        return Err(PactError::IncompatibleIndex("bad index magic".into()));
    }
    let dim = read_u32(&mut r)? as usize;
    let n = read_u64(&mut r)? as usize;
    let mut mode_byte = [0u8; 1];
    r.read_exact(&mut mode_byte)?;
    let m = read_u32(&mut r)? as usize;
    let ksub = read_u32(&mut r)? as usize;
    let encoder_seed = read_u64(&mut r)?;
    let adapter_checksum = read_u64(&mut r)?;

    let read_string = |r: &mut BufReader<std::fs::File>| -> Result<String> {
        let len = read_u32(r)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        String::from_utf8(buf)
            .map_err(|e| PactError::IncompatibleIndex(format!("bad utf-8 in id table: {e}")))
    };
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let id = read_string(&mut r)?;
        let ty = read_string(&mut r)?;
        ids.push((id, ty));
    }

    let exact_dropped = mode_byte[0] == 2;
    let mut entries = Vec::with_capacity(n);
    if exact_dropped {
        for (id, ty) in ids {
            entries.push(IndexEntry {
                id: ArtifactId::new(id)
                    .map_err(|e| PactError::IncompatibleIndex(e.to_string()))?,
                ty: ArtifactType::new(ty),
                vector: Vec::new(),
            });
        }
    } else {
        let mut buf = [0u8; 8];
        for (id, ty) in ids {
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                r.read_exact(&mut buf)?;
                vector.push(f64::from_le_bytes(buf));
            }
            entries.push(IndexEntry {
                id: ArtifactId::new(id)
                    .map_err(|e| PactError::IncompatibleIndex(e.to_string()))?,
                ty: ArtifactType::new(ty),
                vector,
            });
        }
    }

    let pq = if mode_byte[0] >= 1 {
        let dsub = dim / m;
        let mut centroids = vec![0.0; m * ksub * dsub];
        let mut buf = [0u8; 8];
        for slot in centroids.iter_mut() {
            r.read_exact(&mut buf)?;
            *slot = f64::from_le_bytes(buf);
        }
        let mut codes = vec![0u8; n * m];
        r.read_exact(&mut codes)?;
        Some(PqCodebook {
            m,
            ksub,
            dsub,
            centroids,
            codes,
        })
    } else {
        None
    };

    Ok(VectorIndex {
        dim,
        encoder_seed,
        adapter_checksum,
        entries,
        pq,
        exact_dropped,
    })
}
