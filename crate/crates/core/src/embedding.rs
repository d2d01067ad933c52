//! Embedding providers and cosine similarity.
//!
//! The default provider is a feature-hashed term-frequency embedder: no
//! model weights, fully deterministic, good enough to give related texts
//! higher cosine than unrelated ones. A precomputed provider loads
//! text -> vector rows from JSONL for callers that bring real embeddings.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed seed for the bucket hash so vectors are stable across runs,
/// platforms and library versions.
const HASH_SEED: u64 = 0x5eed_0f_feed_beef;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Stable FNV-1a 64-bit hash. std's DefaultHasher is not guaranteed
/// stable across releases, so determinism-critical hashing goes here.
pub fn stable_hash(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// Scales to unit L2 norm; the all-zero vector is left unchanged.
    pub fn normalized(mut self) -> Vector {
        let n = self.norm();
        if n > 0.0 {
            for x in &mut self.0 {
                *x /= n;
            }
        }
        self
    }
}

/// Cosine similarity. Zero vectors have cosine 0 with everything by
/// convention; mismatched dimensions are an error.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Embeds non-empty text into an L2-normalized vector (norm 1 unless
    /// the text produces no features, in which case the zero vector is
    /// returned and is legal).
    fn embed(&self, text: &str) -> Result<Vector>;
}

/// Feature-hashed term-frequency embedder.
///
/// Tokenization: lowercase, split on non-alphanumeric runs. Each token is
/// hashed to one of `dimension` buckets with a fixed-seed FNV-1a hash;
/// bucket counts are L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedTfEmbedder {
    dimension: usize,
}

impl HashedTfEmbedder {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidInput("embedding dimension must be positive".into()));
        }
        Ok(Self { dimension })
    }

    /// Bucket index a single token hashes to.
    pub fn bucket(&self, token: &str) -> usize {
        (stable_hash(token.as_bytes(), HASH_SEED) % self.dimension as u64) as usize
    }
}

impl Default for HashedTfEmbedder {
    fn default() -> Self {
        Self { dimension: 384 }
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

impl EmbeddingProvider for HashedTfEmbedder {
    fn name(&self) -> &str {
        "hashed-tf"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        if text.is_empty() {
            return Err(Error::InvalidInput("cannot embed empty text".into()));
        }
        let mut counts = vec![0.0f64; self.dimension];
        for tok in tokens(text) {
            counts[self.bucket(&tok)] += 1.0;
        }
        Ok(Vector(counts).normalized())
    }
}

#[derive(Deserialize)]
struct PrecomputedRow {
    text: String,
    vector: Vec<f64>,
}

/// Lookup table of externally computed embeddings, keyed on exact text.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbedder {
    vectors: BTreeMap<String, Vector>,
    dimension: usize,
}

/// Loads `{"text": ..., "vector": [...]}` JSONL. The first row fixes the
/// dimension; later rows with a different dimension are a parse error
/// naming the offending line. Vectors are renormalized at load.
pub fn load_precomputed(path: impl AsRef<Path>) -> Result<PrecomputedEmbedder> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = std::io::BufReader::new(file);
    let mut vectors = BTreeMap::new();
    let mut dimension = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: PrecomputedRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let dim = *dimension.get_or_insert(row.vector.len());
        if row.vector.len() != dim {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "vector dimension {} does not match established dimension {dim}",
                    row.vector.len()
                ),
            });
        }
        if vectors.insert(row.text.clone(), Vector(row.vector).normalized()).is_some() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate text {:?}", row.text),
            });
        }
    }
    let dimension = dimension
        .ok_or_else(|| Error::InvalidInput("embedding file contains no rows".into()))?;
    Ok(PrecomputedEmbedder { vectors, dimension })
}

impl EmbeddingProvider for PrecomputedEmbedder {
    fn name(&self) -> &str {
        "precomputed"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        if text.is_empty() {
            return Err(Error::InvalidInput("cannot embed empty text".into()));
        }
        self.vectors
            .get(text)
            .cloned()
            .ok_or_else(|| Error::MissingEmbedding(text.to_string()))
    }
}
