//! REST service over one analyst workspace.
//!
//! Corpus, embeddings and fact store are loaded once and shared read-only.
//! The workspace sits behind a single-writer lock and is written back to its
//! file after every mutation. Provider-bound work (embedding, generation) runs
//! on the blocking pool under a timeout, with no lock held.

mod error;
mod routes;

use std::io;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;
use serde::Serialize;
use thiserror::Error;

use pilework_core::piles::{PileError, TaskTemplates, Workspace};
use pilework_core::providers::{Generator, Providers};
use pilework_core::search::DocEmbeddings;
use pilework_core::validate::DEFAULT_LINK_FLOOR;
use pilework_core::{CorpusIndex, EmbeddingService, FactStore, SCHEMA_VERSION};

pub use error::ApiError;
pub use routes::{list_documents, DocumentListing, DocumentQuery, EntityFacts, GroupIds};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Where the workspace is persisted; `None` keeps it in memory only.
    pub workspace_file: Option<PathBuf>,
    pub provider_timeout: Duration,
    pub link_floor: f64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            workspace_file: None,
            provider_timeout: Duration::from_secs(120),
            link_floor: DEFAULT_LINK_FLOOR,
        }
    }
}

/// Offline pipeline outputs the service reads from.
pub struct Artifacts {
    pub corpus: CorpusIndex,
    pub embeddings: DocEmbeddings,
    pub facts: FactStore,
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("document embeddings do not cover the corpus; re-run `embed`")]
    EmbeddingsOutOfDate,
    #[error("workspace does not match the corpus: {0}")]
    Workspace(#[source] PileError),
}

pub(crate) struct Shared {
    pub corpus: CorpusIndex,
    pub embeddings: DocEmbeddings,
    pub facts: FactStore,
    pub embedder: EmbeddingService,
    pub llm: Arc<dyn Generator>,
    pub templates: TaskTemplates,
    pub workspace: RwLock<Workspace>,
    pub config: ServerConfig,
}

#[derive(Clone)]
pub struct AppState {
    pub(crate) inner: Arc<Shared>,
}

impl AppState {
    pub fn new(
        artifacts: Artifacts,
        providers: Providers,
        templates: TaskTemplates,
        workspace: Workspace,
        config: ServerConfig,
    ) -> Result<Self, StartupError> {
        if !artifacts.embeddings.covers(&artifacts.corpus) {
            return Err(StartupError::EmbeddingsOutOfDate);
        }
        workspace
            .check_documents(&artifacts.corpus)
            .map_err(StartupError::Workspace)?;
        Ok(Self {
            inner: Arc::new(Shared {
                corpus: artifacts.corpus,
                embeddings: artifacts.embeddings,
                facts: artifacts.facts,
                embedder: providers.embedding,
                llm: providers.generator,
                templates,
                workspace: RwLock::new(workspace),
                config,
            }),
        })
    }

    pub fn corpus(&self) -> &CorpusIndex {
        &self.inner.corpus
    }

    pub fn embeddings(&self) -> &DocEmbeddings {
        &self.inner.embeddings
    }

    pub fn facts(&self) -> &FactStore {
        &self.inner.facts
    }

    pub fn embedder(&self) -> &EmbeddingService {
        &self.inner.embedder
    }

    pub fn generator(&self) -> &dyn Generator {
        self.inner.llm.as_ref()
    }

    pub fn templates(&self) -> &TaskTemplates {
        &self.inner.templates
    }

    pub fn config(&self) -> &ServerConfig {
        &self.inner.config
    }

    /// Copy of the current workspace.
    pub fn workspace(&self) -> Workspace {
        self.inner.workspace.read().clone()
    }

    pub fn router(&self) -> axum::Router {
        routes::router(self.clone())
    }
}

/// Success body: `{"schemaVersion": 1, "data": ...}`.
#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub data: T,
}

impl<T> Envelope<T> {
    pub fn new(data: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            data,
        }
    }
}

/// Serve until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, state.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
