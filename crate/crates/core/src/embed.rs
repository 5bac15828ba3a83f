//! Base text encoder plus the trainable query/context linear adapters.
//!
//! The base encoder is a seeded sign-hashing feature encoder: word unigrams
//! and character trigrams are hashed into a fixed number of buckets with a
//! +/-1 sign, then L2-normalized. Dimension is independent of vocabulary and
//! the seed travels with every index so vectors are reproducible anywhere.
//! Vectors from a real embedding model can be supplied instead through the
//! precomputed table.
//!
//! Similarity is a raw dot product. Adapters are applied without
//! re-normalization and there is no temperature; scale lives in the
//! adapters themselves.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::{compose_text, Artifact, TypeTemplates};
use crate::error::{PactError, Result};
use crate::matrix::SquareMatrix;

/// Dense vector of corpus-wide fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) {
        let norm = self.l2_norm();
        if norm > 0.0 {
            for x in self.0.iter_mut() {
                *x /= norm;
            }
        }
    }
}

/// `s(a, b)`: the exact dot product of two equal-dimension vectors.
pub fn similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(PactError::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(dot(a.values(), b.values()))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    acc
}

/// Seeded 64-bit hash, stable across platforms (FNV-1a + splitmix64 finish).
/// `tag` separates feature families so a unigram never aliases a trigram.
fn hash_feature(bytes: &[u8], seed: u64, tag: u8) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h ^= u64::from(tag);
    h = h.wrapping_mul(0x100_0000_01b3);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    h
}

const TAG_UNIGRAM: u8 = 1;
const TAG_TRIGRAM: u8 = 2;

/// Lowercased alphanumeric tokens of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Deterministic text-to-vector map.
#[derive(Debug, Clone)]
pub enum BaseEncoder {
    /// Sign-hashing feature encoder over word unigrams + char trigrams.
    FeatureHash { dim: usize, seed: u64 },
    /// Externally produced vectors, looked up by the exact input string.
    Precomputed {
        dim: usize,
        table: HashMap<String, Vec<f64>>,
    },
}

impl BaseEncoder {
    pub fn feature_hash(dim: usize, seed: u64) -> Self {
        BaseEncoder::FeatureHash { dim, seed }
    }

    pub fn precomputed(dim: usize, table: HashMap<String, Vec<f64>>) -> Self {
        BaseEncoder::Precomputed { dim, table }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseEncoder::FeatureHash { dim, .. } => *dim,
            BaseEncoder::Precomputed { dim, .. } => *dim,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            BaseEncoder::FeatureHash { seed, .. } => *seed,
            BaseEncoder::Precomputed { .. } => 0,
        }
    }

    /// Encode raw text into a base vector.
    pub fn encode(&self, text: &str) -> Result<Embedding> {
        match self {
            BaseEncoder::FeatureHash { dim, seed } => {
                let tokens = tokenize(text);
                if tokens.is_empty() {
                    return Err(PactError::EmptyText);
                }
                let mut values = vec![0.0; *dim];
                for token in &tokens {
                    accumulate(&mut values, token.as_bytes(), *seed, TAG_UNIGRAM);
                    let chars: Vec<char> = token.chars().collect();
                    if chars.len() >= 3 {
                        for window in chars.windows(3) {
                            let tri: String = window.iter().collect();
                            accumulate(&mut values, tri.as_bytes(), *seed, TAG_TRIGRAM);
                        }
                    }
                }
                let mut emb = Embedding(values);
                emb.normalize();
                Ok(emb)
            }
            BaseEncoder::Precomputed { dim, table } => {
                let vector = table.get(text).ok_or_else(|| PactError::MissingVector {
                    key: text.to_string(),
                })?;
                if vector.len() != *dim {
                    return Err(PactError::DimMismatch {
                        left: vector.len(),
                        right: *dim,
                    });
                }
                Ok(Embedding(vector.clone()))
            }
        }
    }
}

#[inline]
fn accumulate(values: &mut [f64], bytes: &[u8], seed: u64, tag: u8) {
    let h = hash_feature(bytes, seed, tag);
    let bucket = (h % values.len() as u64) as usize;
    let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
    values[bucket] += sign;
}

/// Trainable query/context linear maps over the base encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterPair {
    pub query: SquareMatrix,
    pub context: SquareMatrix,
}

impl AdapterPair {
    /// Untrained adapters: both maps start at identity.
    pub fn identity(dim: usize) -> Self {
        Self {
            query: SquareMatrix::identity(dim),
            context: SquareMatrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.dim()
    }

    /// FNV-1a checksum over the exact little-endian byte layout; stored in
    /// index headers so stale adapter/index pairings are detectable.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        };
        eat(&(self.dim() as u32).to_le_bytes());
        for m in [&self.query, &self.context] {
            for v in m.data() {
                eat(&v.to_le_bytes());
            }
        }
        h
    }
}

/// Encode an artifact's composed text with the context adapter.
pub fn encode_context(
    artifact: &Artifact,
    templates: &TypeTemplates,
    enc: &BaseEncoder,
    adapters: &AdapterPair,
) -> Result<Embedding> {
    let text = compose_text(artifact, templates)?;
    let base = enc.encode(&text)?;
    Ok(Embedding(adapters.context.matvec(base.values())))
}

/// Encode a free-form query with the query adapter.
pub fn encode_query(query: &str, enc: &BaseEncoder, adapters: &AdapterPair) -> Result<Embedding> {
    let base = enc.encode(query)?;
    Ok(Embedding(adapters.query.matvec(base.values())))
}

const ADAPTER_MAGIC: &[u8; 8] = b"PACTADPT";
const ADAPTER_VERSION: u32 = 1;

/// Write adapters: magic, version u32, D u32, query then context matrices
/// row-major f64. Little-endian.
pub fn save_adapters(adapters: &AdapterPair, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(ADAPTER_MAGIC);
    out.extend_from_slice(&ADAPTER_VERSION.to_le_bytes());
    out.extend_from_slice(&(adapters.dim() as u32).to_le_bytes());
    for m in [&adapters.query, &adapters.context] {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn load_adapters(path: impl AsRef<Path>) -> Result<AdapterPair> {
    let mut file = std::fs::File::open(path.as_ref())?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != ADAPTER_MAGIC {
        return Err(PactError::IncompatibleIndex("bad adapter magic".into()));
    }
    let version = read_u32(&mut file)?;
    if version != ADAPTER_VERSION {
        return Err(PactError::IncompatibleIndex(format!(
            "unsupported adapter version {version}"
        )));
    }
    let dim = read_u32(&mut file)? as usize;
    let read_matrix = |file: &mut std::fs::File| -> Result<SquareMatrix> {
        let mut data = vec![0.0; dim * dim];
        let mut buf = [0u8; 8];
        for slot in data.iter_mut() {
            file.read_exact(&mut buf)?;
            *slot = f64::from_le_bytes(buf);
        }
        Ok(SquareMatrix::from_rows(dim, data))
    };
    let query = read_matrix(&mut file)?;
    let context = read_matrix(&mut file)?;
    Ok(AdapterPair { query, context })
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_text_is_rejected() {
        let enc = BaseEncoder::feature_hash(64, 7);
        assert!(matches!(enc.encode(""), Err(PactError::EmptyText)));
        // punctuation-only input yields no tokens either
        assert!(matches!(enc.encode(" | !!"), Err(PactError::EmptyText)));
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = BaseEncoder::feature_hash(64, 7);
        let a = enc.encode("payments oncall rotation").unwrap();
        let b = enc.encode("payments oncall rotation").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn feature_hash_output_is_unit_norm() {
        let enc = BaseEncoder::feature_hash(64, 7);
        let v = enc.encode("payments oncall").unwrap();
        assert!((v.l2_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn no_vector_collisions_on_synthetic_vocabulary() {
        // 1,000 distinct tokens at D=256: zero identical vector pairs
        let enc = BaseEncoder::feature_hash(256, 7);
        let vectors: Vec<Embedding> = (0..1000)
            .map(|i| enc.encode(&format!("token{i}")).unwrap())
            .collect();
        let mut collisions = 0;
        for i in 0..vectors.len() {
            for j in (i + 1)..vectors.len() {
                if vectors[i] == vectors[j] {
                    collisions += 1;
                }
            }
        }
        assert_eq!(collisions, 0);
    }

    #[test]
    fn similarity_hand_values() {
        let s = similarity(&Embedding(vec![1.0, 0.0]), &Embedding(vec![0.0, 1.0])).unwrap();
        assert_eq!(s, 0.0);
        let s = similarity(&Embedding(vec![1.0, 2.0]), &Embedding(vec![3.0, 4.0])).unwrap();
        assert_eq!(s, 11.0);
    }

    #[test]
    fn similarity_dim_mismatch() {
        let err = similarity(&Embedding(vec![1.0]), &Embedding(vec![1.0, 2.0])).unwrap_err();
        assert!(matches!(err, PactError::DimMismatch { .. }));
    }

    #[test]
    fn similarity_is_symmetric_and_self_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = Embedding((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let y = Embedding((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());
            assert_eq!(
                similarity(&x, &y).unwrap(),
                similarity(&y, &x).unwrap()
            );
            let self_sim = similarity(&x, &x).unwrap();
            assert!(self_sim >= 0.0);
            assert!((self_sim - x.l2_norm().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_adapters_are_noop() {
        let enc = BaseEncoder::feature_hash(32, 7);
        let adapters = AdapterPair::identity(32);
        let q = encode_query("payment flows", &enc, &adapters).unwrap();
        assert_eq!(q, enc.encode("payment flows").unwrap());
    }

    #[test]
    fn zero_context_matrix_kills_similarity() {
        let enc = BaseEncoder::feature_hash(16, 7);
        let adapters = AdapterPair {
            query: SquareMatrix::identity(16),
            context: SquareMatrix::zeros(16),
        };
        let base = enc.encode("anything at all").unwrap();
        let ctx = Embedding(adapters.context.matvec(base.values()));
        assert!(ctx.values().iter().all(|&x| x == 0.0));
        assert_eq!(similarity(&base, &ctx).unwrap(), 0.0);
    }

    #[test]
    fn adapter_matches_naive_matvec_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dim = 4;
        let data: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = SquareMatrix::from_rows(dim, data.clone());
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // independent triple-loop product
        let mut want = vec![0.0; dim];
        for i in 0..dim {
            for j in 0..dim {
                want[i] += data[i * dim + j] * v[j];
            }
        }
        let got = m.matvec(&v);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn adapter_application_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 8;
        let m1 = SquareMatrix::from_rows(
            dim,
            (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let m2 = SquareMatrix::from_rows(
            dim,
            (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut sum = m1.clone();
        sum.axpy(1.0, &m2);
        let combined = sum.matvec(&v);
        let separate: Vec<f64> = m1
            .matvec(&v)
            .iter()
            .zip(m2.matvec(&v).iter())
            .map(|(a, b)| a + b)
            .collect();
        for (c, s) in combined.iter().zip(separate.iter()) {
            assert!((c - s).abs() < 1e-9);
        }
    }

    #[test]
    fn precomputed_lookup_and_missing_key() {
        let mut table = HashMap::new();
        table.insert("alpha".to_string(), vec![1.0, 2.0]);
        let enc = BaseEncoder::precomputed(2, table);
        assert_eq!(enc.encode("alpha").unwrap(), Embedding(vec![1.0, 2.0]));
        assert!(matches!(
            enc.encode("beta"),
            Err(PactError::MissingVector { .. })
        ));
    }

    #[test]
    fn adapter_file_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 6;
        let adapters = AdapterPair {
            query: SquareMatrix::from_rows(
                dim,
                (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ),
            context: SquareMatrix::from_rows(
                dim,
                (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adapters.bin");
        save_adapters(&adapters, &path).unwrap();
        let loaded = load_adapters(&path).unwrap();
        assert_eq!(loaded, adapters);
        assert_eq!(loaded.checksum(), adapters.checksum());
    }
}
