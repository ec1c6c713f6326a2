//! Document sensemaking engine.
//!
//! The crate ingests a closed corpus of plain-text documents, builds a
//! provenance-tracked knowledge graph from LLM-extracted triples, ranks
//! documents and facts by embedding similarity, and runs parameterized LLM
//! tasks over analyst-curated piles of documents. Generated evidence can be
//! grounded back to the corpus with the extract / link / suggest operations
//! in [`validate`].
//!
//! All model access goes through the [`providers`] traits, so every pipeline
//! stage can run offline against the deterministic mock providers.

pub mod corpus;
pub mod kg_build;
pub mod kg_query;
pub mod piles;
pub mod providers;
pub mod search;
pub mod text;
pub mod validate;
pub mod workers;

pub use corpus::{CorpusIndex, Document};
pub use kg_build::{Fact, FactStore, RawTriple};
pub use piles::{EvidenceRecord, Pile, TaskKind, TaskParams, Workspace};
pub use providers::{EmbeddingService, EmbeddingVector, Generator};
pub use search::{DocEmbeddings, SearchResult};

/// Version tag carried by every persisted or served JSON payload.
pub const SCHEMA_VERSION: u32 = 1;
