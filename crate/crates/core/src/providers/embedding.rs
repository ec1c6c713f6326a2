use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{content_hash, EmbeddingCache, EmbeddingVector, ProviderError, RetryPolicy};
use crate::workers::{parallel_map, DEFAULT_MAX_IN_FLIGHT};

/// Raw text-embedding model.
pub trait Embedder: Send + Sync {
    /// Stable identifier of the provider implementation, part of the cache key.
    fn provider_id(&self) -> &str;
    fn model_id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Embed non-empty text. Output need not be normalized.
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

/// Dimension of the [`HashEmbedder`] vectors.
pub const MOCK_EMBEDDING_DIM: usize = 256;

/// Offline bag-of-words embedder.
///
/// Text is lowercased and split on whitespace; every token hashes to one of
/// `dim` buckets and adds 1 there. Shared vocabulary therefore raises cosine
/// similarity, and identical token multisets embed identically.
#[derive(Debug)]
pub struct HashEmbedder {
    dim: usize,
    calls: AtomicUsize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(MOCK_EMBEDDING_DIM)
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            calls: AtomicUsize::new(0),
        }
    }

    /// Bucket a (lowercased) token lands in.
    pub fn bucket(&self, token: &str) -> usize {
        let digest = Sha256::digest(token.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(head) % self.dim as u64) as usize
    }

    /// Number of `embed` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Embedder for HashEmbedder {
    fn provider_id(&self) -> &str {
        "mock-hash-embed"
    }

    fn model_id(&self) -> &str {
        "token-hash"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut v = vec![0.0; self.dim];
        for token in text.to_lowercase().split_whitespace() {
            v[self.bucket(token)] += 1.0;
        }
        Ok(v)
    }
}

/// Normalizing, caching, retrying front end over an [`Embedder`].
pub struct EmbeddingService {
    embedder: Arc<dyn Embedder>,
    cache: EmbeddingCache,
    retry: RetryPolicy,
    max_in_flight: usize,
}

impl std::fmt::Debug for EmbeddingService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingService")
            .field("provider", &self.embedder.provider_id())
            .field("model", &self.embedder.model_id())
            .field("dim", &self.embedder.dim())
            .field("cache", &self.cache.dir())
            .finish()
    }
}

impl EmbeddingService {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            embedder,
            cache: EmbeddingCache::in_memory(),
            retry: RetryPolicy::default(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    /// Service over the offline [`HashEmbedder`] with an in-memory cache.
    pub fn mock() -> Self {
        Self::new(Arc::new(HashEmbedder::default()))
    }

    pub fn with_cache(mut self, cache: EmbeddingCache) -> Self {
        self.cache = cache;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn dim(&self) -> usize {
        self.embedder.dim()
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    /// Unit-length embedding of `text`; the zero vector for blank text.
    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let dim = self.embedder.dim();
        if text.trim().is_empty() {
            return Ok(EmbeddingVector::zeros(dim));
        }
        let provider = self.embedder.provider_id();
        let model = self.embedder.model_id();
        let hash = content_hash(text.as_bytes());
        if let Some(v) = self.cache.get(provider, model, &hash, dim)? {
            return Ok(v);
        }
        let raw = self.retry.run(|| self.embedder.embed(text))?;
        if raw.len() != dim {
            return Err(ProviderError::DimensionMismatch {
                expected: dim,
                actual: raw.len(),
            });
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(ProviderError::Rejected("embedding contains non-finite values".into()));
        }
        let v = EmbeddingVector::new(raw).normalized();
        self.cache.put(provider, model, &hash, &v)?;
        Ok(v)
    }

    /// Embed every text with bounded parallelism, preserving order. Fails with
    /// the first error in input order; completed entries stay cached.
    pub fn embed_many<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        parallel_map(texts, self.max_in_flight, |t| self.embed_text(t.as_ref()))
            .into_iter()
            .collect()
    }
}
