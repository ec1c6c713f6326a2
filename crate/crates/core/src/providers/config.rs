use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    EmbeddingCache, EmbeddingService, Generator, HashEmbedder, OpenAiCompatible, ProviderError, ReplayGenerator,
    RetryPolicy, Retrying, MOCK_EMBEDDING_DIM,
};
use crate::workers::DEFAULT_MAX_IN_FLIGHT;

/// One provider entry of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", rename_all_fields = "camelCase")]
pub enum ProviderSpec {
    HttpOpenaiCompatible {
        base_url: String,
        model: String,
        /// Required when used for embeddings.
        #[serde(default)]
        dimension: Option<usize>,
        /// Environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
    MockHashEmbed {
        #[serde(default = "default_mock_dim")]
        dimension: usize,
    },
    MockReplay {
        /// Replay script path, relative to the configuration file.
        script: PathBuf,
    },
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_mock_dim() -> usize {
    MOCK_EMBEDDING_DIM
}

fn default_max_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

/// Provider configuration file.
///
/// ```json
/// {
///   "embedding":  { "kind": "mock-hash-embed", "dimension": 256 },
///   "generation": { "kind": "mock-replay", "script": "replay.jsonl" },
///   "maxInFlight": 4
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProviderConfig {
    pub embedding: ProviderSpec,
    pub generation: ProviderSpec,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Directory the config was loaded from; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ProviderConfig {
    /// Fully offline: hash embeddings and an empty replay script.
    fn default() -> Self {
        Self {
            embedding: ProviderSpec::MockHashEmbed {
                dimension: MOCK_EMBEDDING_DIM,
            },
            generation: ProviderSpec::MockReplay { script: PathBuf::new() },
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            base_dir: PathBuf::new(),
        }
    }
}

/// Instantiated providers.
pub struct Providers {
    pub embedding: EmbeddingService,
    pub generator: Arc<dyn Generator>,
}

impl ProviderConfig {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("cannot read provider config {}: {e}", path.display())))?;
        let mut config: ProviderConfig =
            serde_json::from_str(&text).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    fn api_key(env: &Option<String>) -> Result<Option<String>, ProviderError> {
        match env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ProviderError::Config(format!("environment variable {var} is not set"))),
        }
    }

    /// Build the providers. `cache_dir` enables the on-disk embedding cache.
    pub fn build(&self, cache_dir: Option<&Path>) -> Result<Providers, ProviderError> {
        let retry = RetryPolicy::default();
        let embedder: Arc<dyn super::Embedder> = match &self.embedding {
            ProviderSpec::MockHashEmbed { dimension } => {
                if *dimension == 0 {
                    return Err(ProviderError::Config("dimension must be positive".into()));
                }
                Arc::new(HashEmbedder::new(*dimension))
            }
            ProviderSpec::HttpOpenaiCompatible {
                base_url,
                model,
                dimension,
                api_key_env,
                timeout_secs,
            } => {
                let dim = dimension
                    .filter(|d| *d > 0)
                    .ok_or_else(|| ProviderError::Config("http embedding provider needs a dimension".into()))?;
                Arc::new(OpenAiCompatible::new(
                    base_url.clone(),
                    model.clone(),
                    dim,
                    Self::api_key(api_key_env)?,
                    Duration::from_secs(*timeout_secs),
                ))
            }
            ProviderSpec::MockReplay { .. } => {
                return Err(ProviderError::Config("mock-replay cannot serve embeddings".into()))
            }
        };
        let generator: Arc<dyn Generator> = match &self.generation {
            ProviderSpec::MockReplay { script } => {
                if script.as_os_str().is_empty() {
                    Arc::new(ReplayGenerator::default())
                } else {
                    Arc::new(ReplayGenerator::load(&self.base_dir.join(script))?)
                }
            }
            ProviderSpec::HttpOpenaiCompatible {
                base_url,
                model,
                api_key_env,
                timeout_secs,
                ..
            } => Arc::new(Retrying::new(
                OpenAiCompatible::new(
                    base_url.clone(),
                    model.clone(),
                    0,
                    Self::api_key(api_key_env)?,
                    Duration::from_secs(*timeout_secs),
                ),
                retry,
            )),
            ProviderSpec::MockHashEmbed { .. } => {
                return Err(ProviderError::Config("mock-hash-embed cannot serve generation".into()))
            }
        };
        let cache = match cache_dir {
            Some(dir) => EmbeddingCache::on_disk(dir),
            None => EmbeddingCache::in_memory(),
        };
        let embedding = EmbeddingService::new(embedder)
            .with_cache(cache)
            .with_retry(retry)
            .with_max_in_flight(self.max_in_flight);
        Ok(Providers { embedding, generator })
    }
}
