//! Embedding and text-generation provider contracts.
//!
//! Model access is split into two object-safe traits: [`Embedder`] maps text
//! to a raw vector and [`Generator`] completes a prompt. Everything above this
//! module talks to an [`EmbeddingService`], which adds normalization, caching
//! and bounded retries on top of a raw embedder.

mod cache;
mod config;
mod embedding;
mod generation;
mod http;
mod retry;
mod vector;

pub use cache::EmbeddingCache;
pub use config::{ProviderConfig, ProviderSpec, Providers};
pub use embedding::{EmbeddingService, HashEmbedder, MOCK_EMBEDDING_DIM};
pub use generation::{
    request_digest, GenerationRequest, GenerationResult, Generator, ReplayGenerator, ReplayRecord, Retrying,
    TEMPERATURE_RANGE,
};
pub use http::OpenAiCompatible;
pub use retry::RetryPolicy;
pub use vector::{cosine_similarity, rank_by_similarity, EmbeddingVector};

use thiserror::Error;

pub use embedding::Embedder;

#[derive(Debug, Error)]
pub enum ProviderError {
    /// Network or server-side failure; retried by [`RetryPolicy`].
    #[error("provider transport error: {0}")]
    Transport(String),
    /// The provider understood the request and refused it.
    #[error("provider rejected request: {0}")]
    Rejected(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("replay script has no response for request digest {digest}")]
    ScriptMiss { digest: String },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("provider configuration error: {0}")]
    Config(String),
    #[error("embedding cache error: {0}")]
    Cache(#[from] std::io::Error),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub(crate) fn content_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
