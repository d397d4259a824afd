//! Embedding providers.

use std::fmt;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::remote::{self, RetryPolicy};

pub const EMBED_API_KEY_ENV: &str = "QA_EMBED_API_KEY";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider unavailable{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    ProviderUnavailable { status: Option<u16>, message: String },
    #[error("embedding provider returned {got} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
}

/// Fixed-length real vector with finite entries.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(EmbedError::NonFinite)
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }
}

impl fmt::Debug for EmbeddingVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EmbeddingVector(d={}, norm={:.4})", self.0.len(), self.norm())
    }
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier recorded in the index metadata.
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Embeds a single text.
pub async fn embed(text: &str, provider: &dyn EmbeddingProvider) -> Result<EmbeddingVector, EmbedError> {
    if text.trim().is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let mut out = provider.embed_batch(&[text.to_owned()]).await?;
    out.pop().ok_or_else(|| EmbedError::ProviderUnavailable {
        status: None,
        message: "provider returned no vectors".into(),
    })
}

/// Deterministic hashed bag-of-words embedding.
///
/// Each lowercased alphanumeric token is hashed (FNV-1a followed by a 64 bit
/// finalizer) into one of `dimension` buckets, with the sign taken from the
/// lowest hash bit; the sum is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedBagOfWords {
    dimension: usize,
    name: String,
}

impl HashedBagOfWords {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self {
            dimension,
            name: format!("local-hash-{dimension}"),
        }
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut signed = vec![0f64; self.dimension];
        let mut counts = vec![0f64; self.dimension];
        for token in tokens(text) {
            let h = mix64(fnv1a(token.as_bytes()));
            let bucket = ((h >> 1) % self.dimension as u64) as usize;
            signed[bucket] += if h & 1 == 1 { 1.0 } else { -1.0 };
            counts[bucket] += 1.0;
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm(&counts) == 0.0 {
            return Err(EmbedError::EmptyText);
        }
        // Opposite-signed collisions can cancel exactly; unsigned counts never do.
        let acc = if norm(&signed) == 0.0 { counts } else { signed };
        let n = norm(&acc);
        let values = acc.iter().map(|v| (v / n) as f32).collect();
        EmbeddingVector::new(values)
    }
}

#[async_trait]
impl EmbeddingProvider for HashedBagOfWords {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

/// Lowercased alphanumeric runs.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn mix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// OpenAI-compatible `/embeddings` endpoint.
pub struct RemoteEmbeddings {
    client: reqwest::Client,
    url: String,
    model: String,
    dimension: usize,
    api_key: Option<String>,
    retry: RetryPolicy,
    name: String,
}

impl RemoteEmbeddings {
    /// Reads the credential from `QA_EMBED_API_KEY`.
    pub fn from_env(base_url: &str, model: &str, dimension: usize, retry: RetryPolicy) -> Self {
        Self::new(base_url, model, dimension, std::env::var(EMBED_API_KEY_ENV).ok(), retry)
    }

    pub fn new(base_url: &str, model: &str, dimension: usize, api_key: Option<String>, retry: RetryPolicy) -> Self {
        let base = base_url.trim_end_matches('/');
        let url = if base.ends_with("/embeddings") {
            base.to_owned()
        } else {
            format!("{base}/embeddings")
        };
        Self {
            client: reqwest::Client::builder()
                .timeout(std::time::Duration::from_secs(60))
                .build()
                .unwrap_or_default(),
            url,
            model: model.to_owned(),
            dimension,
            api_key,
            retry,
            name: format!("remote:{model}"),
        }
    }
}

#[async_trait]
impl EmbeddingProvider for RemoteEmbeddings {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText);
        }
        let body = json!({ "model": self.model, "input": texts });
        let resp = remote::post_json(&self.client, &self.url, self.api_key.as_deref(), &body, self.retry)
            .await
            .map_err(|f| EmbedError::ProviderUnavailable {
                status: f.status,
                message: f.message,
            })?;

        #[derive(Deserialize)]
        struct Item {
            index: usize,
            embedding: Vec<f32>,
        }
        #[derive(Deserialize)]
        struct Resp {
            data: Vec<Item>,
        }
        let mut parsed: Resp = serde_json::from_value(resp).map_err(|e| EmbedError::ProviderUnavailable {
            status: None,
            message: format!("unexpected embeddings payload: {e}"),
        })?;
        if parsed.data.len() != texts.len() {
            return Err(EmbedError::ProviderUnavailable {
                status: None,
                message: format!("asked for {} embeddings, got {}", texts.len(), parsed.data.len()),
            });
        }
        parsed.data.sort_by_key(|i| i.index);
        parsed
            .data
            .into_iter()
            .map(|item| {
                if item.embedding.len() != self.dimension {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.dimension,
                        got: item.embedding.len(),
                    });
                }
                EmbeddingVector::new(item.embedding)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
        let dot: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| f64::from(*x) * f64::from(*y))
            .sum();
        dot / (a.norm() * b.norm())
    }

    #[tokio::test]
    async fn local_is_deterministic_and_normalized() {
        let p = HashedBagOfWords::new(64);
        let a = embed("prazo de vigência", &p).await.unwrap();
        let b = embed("prazo de vigência", &p).await.unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dimension(), 64);
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[tokio::test]
    async fn empty_text_rejected() {
        let p = HashedBagOfWords::new(64);
        assert!(matches!(embed("", &p).await, Err(EmbedError::EmptyText)));
        assert!(matches!(embed("  ", &p).await, Err(EmbedError::EmptyText)));
        assert!(matches!(p.embed_one("!!! ..."), Err(EmbedError::EmptyText)));
    }

    #[tokio::test]
    async fn shared_tokens_rank_closer() {
        let p = HashedBagOfWords::new(64);
        let v1 = embed("prazo de vigência", &p).await.unwrap();
        let v2 = embed("vigência do contrato", &p).await.unwrap();
        let v3 = embed("penalidades", &p).await.unwrap();
        // values computed independently from the hashing scheme
        assert!((cosine(&v1, &v2) - 1.0 / 3.0).abs() < 1e-6);
        assert!(cosine(&v1, &v3).abs() < 1e-6);
        assert!(cosine(&v1, &v2) > cosine(&v1, &v3));
    }

    #[test]
    fn case_and_punctuation_insensitive() {
        let p = HashedBagOfWords::new(32);
        assert_eq!(
            p.embed_one("Oracle, Database!").unwrap(),
            p.embed_one("oracle database").unwrap()
        );
    }

    #[test]
    fn cancelling_collisions_still_unit_norm() {
        // At dimension 64 these four tokens cancel pairwise under signed hashing.
        let p = HashedBagOfWords::new(64);
        let v = p.embed_one("tm äq zv pa").unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(EmbeddingVector::new(vec![1.0, f32::NAN]).is_err());
        assert!(EmbeddingVector::new(vec![1.0, f32::INFINITY]).is_err());
    }
}
