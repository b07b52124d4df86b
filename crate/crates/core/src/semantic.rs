//! Embedding-based semantic similarity.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::http::HttpClient;
use crate::scalar::Scalar;
use crate::text;

/// Dense embedding; nonempty and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("embedding has dimension 0".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("embedding has non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }
}

/// Cosine of the angle between `u` and `v`.
pub fn cosine<T: Scalar>(u: &EmbeddingVector<T>, v: &EmbeddingVector<T>) -> Result<T> {
    if u.dimension() != v.dimension() {
        return Err(Error::DimensionMismatch(u.dimension(), v.dimension()));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == T::zero() || nv == T::zero() {
        return Err(Error::ZeroVector);
    }
    let dot: T = u.values.iter().zip(&v.values).map(|(a, b)| *a * *b).sum();
    // keep within [-1, 1] despite rounding
    Ok((dot / (nu * nv)).max(-T::one()).min(T::one()))
}

pub trait EmbeddingBackend<T: Scalar = f64>: Send + Sync {
    fn name(&self) -> &str;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<T>>>;
}

/// Cosine similarity of the two texts' embeddings, with negative values clamped to 0.
pub fn semantic_similarity<T: Scalar>(
    reference: &str,
    generated: &str,
    backend: &dyn EmbeddingBackend<T>,
) -> Result<T> {
    if reference.trim().is_empty() || generated.trim().is_empty() {
        return Err(Error::Validation("semantic similarity needs two nonempty texts".into()));
    }
    let vectors = backend.embed_batch(&[reference, generated])?;
    if vectors.len() != 2 {
        return Err(Error::BackendProtocol {
            backend: backend.name().to_string(),
            reason: format!("expected 2 vectors, got {}", vectors.len()),
        });
    }
    Ok(cosine(&vectors[0], &vectors[1])?.max(T::zero()))
}

/// Deterministic term-frequency vectors over normalized word tokens, hashed into a
/// fixed number of buckets with 64-bit FNV-1a. Not comparable to a trained model.
#[derive(Debug, Clone)]
pub struct HashingTfBackend {
    dimension: usize,
}

impl HashingTfBackend {
    pub const DEFAULT_DIMENSION: usize = 1024;

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension }
    }

    fn bucket(&self, token: &str) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        (h % self.dimension as u64) as usize
    }

    pub fn embed_one<T: Scalar>(&self, source: &str) -> Vec<T> {
        let mut v = vec![T::zero(); self.dimension];
        for tok in text::words(source) {
            let b = self.bucket(&tok);
            v[b] = v[b] + T::one();
        }
        v
    }
}

impl Default for HashingTfBackend {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMENSION)
    }
}

impl<T: Scalar> EmbeddingBackend<T> for HashingTfBackend {
    fn name(&self) -> &str {
        "hashing-tf"
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<T>>> {
        texts
            .iter()
            .map(|t| EmbeddingVector::new(self.embed_one(t)))
            .collect()
    }
}

/// Remote embedding backend: `{"texts": [...]}` -> `{"vectors": [[...], ...]}`.
///
/// A reply may also carry `"truncated": [bool, ...]`; truncated inputs are logged.
pub struct HttpEmbeddingBackend {
    client: Arc<HttpClient>,
}

impl HttpEmbeddingBackend {
    pub fn new(client: HttpClient) -> Self {
        Self {
            client: Arc::new(client),
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingWire {
    vectors: Vec<Vec<f64>>,
    #[serde(default)]
    truncated: Vec<bool>,
}

impl<T: Scalar> EmbeddingBackend<T> for HttpEmbeddingBackend {
    fn name(&self) -> &str {
        self.client.name()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<T>>> {
        let wire: EmbeddingWire = self.client.post_json(&json!({ "texts": texts }))?;
        let protocol = |reason: String| Error::BackendProtocol {
            backend: self.client.name().to_string(),
            reason,
        };
        if wire.vectors.len() != texts.len() {
            return Err(protocol(format!(
                "{} vectors for {} texts",
                wire.vectors.len(),
                texts.len()
            )));
        }
        for (i, t) in wire.truncated.iter().enumerate() {
            if *t {
                log::warn!("{}: input {i} was truncated by the embedding backend", self.client.name());
            }
        }
        if let Some(first) = wire.vectors.first() {
            if let Some(bad) = wire.vectors.iter().find(|v| v.len() != first.len()) {
                return Err(Error::DimensionMismatch(first.len(), bad.len()));
            }
        }
        wire.vectors
            .into_iter()
            .map(|v| {
                let converted = v
                    .into_iter()
                    .map(|x| T::from_f64(x).ok_or_else(|| protocol("non-numeric component".into())))
                    .collect::<Result<Vec<T>>>()?;
                EmbeddingVector::new(converted).map_err(|e| protocol(e.to_string()))
            })
            .collect()
    }
}
