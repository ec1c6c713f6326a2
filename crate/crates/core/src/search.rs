//! Embedding-ranked document search over the whole corpus or a subset of it.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusIndex;
use crate::providers::{rank_by_similarity, EmbeddingService, EmbeddingVector, ProviderError};

/// Result count the service API uses when the caller does not pick one.
pub const DEFAULT_SEARCH_K: usize = 20;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search query is empty")]
    EmptyQuery,
    #[error("k must be positive")]
    InvalidK,
    #[error("unknown candidate document {0:?}")]
    UnknownDocument(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("embedding table I/O: {0}")]
    Io(#[from] io::Error),
    #[error("malformed embedding table line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SearchResult {
    pub doc_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// One embedding per document body, in corpus order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocEmbeddings {
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    by_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TableRecord {
    id: String,
    embedding: EmbeddingVector,
}

/// Embed every document body. On provider failure the build aborts; entries
/// completed before the failure remain in the embedding cache.
pub fn build_doc_embeddings(index: &CorpusIndex, embedder: &EmbeddingService) -> Result<DocEmbeddings, ProviderError> {
    let bodies: Vec<&str> = index.documents().iter().map(|d| d.body.as_str()).collect();
    let vectors = embedder.embed_many(&bodies)?;
    Ok(DocEmbeddings::from_parts(
        index.documents().iter().map(|d| d.id.clone()).collect(),
        vectors,
    ))
}

impl DocEmbeddings {
    fn from_parts(ids: Vec<String>, vectors: Vec<EmbeddingVector>) -> Self {
        let by_id = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self { ids, vectors, by_id }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.by_id.get(id).map(|&i| &self.vectors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    /// True when the table holds exactly the corpus' documents.
    pub fn covers(&self, index: &CorpusIndex) -> bool {
        self.len() == index.len() && index.documents().iter().all(|d| self.by_id.contains_key(&d.id))
    }

    /// Rank documents against an already embedded query. `candidates`
    /// restricts the pool; `None` ranks the whole table.
    pub fn rank(
        &self,
        query: &EmbeddingVector,
        k: usize,
        candidates: Option<&[String]>,
    ) -> Result<Vec<SearchResult>, SearchError> {
        if k == 0 {
            return Err(SearchError::InvalidK);
        }
        let ranked = match candidates {
            None => rank_by_similarity(query, self.iter(), k)?,
            Some(ids) => {
                let mut pool = Vec::with_capacity(ids.len());
                for id in ids {
                    let (key, v) = self
                        .by_id
                        .get_key_value(id.as_str())
                        .map(|(key, &i)| (key.as_str(), &self.vectors[i]))
                        .ok_or_else(|| SearchError::UnknownDocument(id.clone()))?;
                    pool.push((key, v));
                }
                pool.sort_by(|a, b| a.0.cmp(b.0));
                pool.dedup_by(|a, b| a.0 == b.0);
                rank_by_similarity(query, pool, k)?
            }
        };
        Ok(ranked
            .into_iter()
            .enumerate()
            .map(|(i, (id, score))| SearchResult {
                doc_id: id.to_string(),
                score,
                rank: i + 1,
            })
            .collect())
    }

    /// Top-`k` documents for a free-text query.
    pub fn semantic_search(
        &self,
        embedder: &EmbeddingService,
        query: &str,
        k: usize,
        candidates: Option<&[String]>,
    ) -> Result<Vec<SearchResult>, SearchError> {
        if query.trim().is_empty() {
            return Err(SearchError::EmptyQuery);
        }
        if k == 0 {
            return Err(SearchError::InvalidK);
        }
        let q = embedder.embed_text(query)?;
        self.rank(&q, k, candidates)
    }

    /// Newline-delimited `{"id", "embedding"}` records in corpus order.
    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for (id, v) in self.iter() {
            serde_json::to_writer(
                &mut out,
                &TableRecord {
                    id: id.to_string(),
                    embedding: v.clone(),
                },
            )?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        fs::write(path, buf)
    }

    pub fn load(path: &Path) -> Result<Self, SearchError> {
        let text = fs::read_to_string(path)?;
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: TableRecord = serde_json::from_str(line).map_err(|e| SearchError::Malformed {
                line: n + 1,
                message: e.to_string(),
            })?;
            ids.push(record.id);
            vectors.push(record.embedding);
        }
        Ok(Self::from_parts(ids, vectors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use std::sync::Arc;

    use crate::providers::HashEmbedder;

    fn corpus() -> CorpusIndex {
        CorpusIndex::from_documents(vec![
            Document::new("d1", "a", "missing employees of the gas company"),
            Document::new("d2", "b", "protests in the capital city"),
            Document::new("d3", "c", "the police investigate the kidnapping"),
            Document::new("d7", "d", "employees reported missing after the gala"),
        ])
        .unwrap()
    }

    #[test]
    fn verbatim_body_ranks_first_with_unit_score() {
        let service = EmbeddingService::mock();
        let index = corpus();
        let table = build_doc_embeddings(&index, &service).unwrap();
        let body = &index.get("d7").unwrap().body;
        let results = table.semantic_search(&service, body, 3, None).unwrap();
        assert_eq!(results[0].doc_id, "d7");
        assert_eq!(results[0].rank, 1);
        assert!((results[0].score - 1.0).abs() < 1e-6);
        assert_eq!(results.iter().map(|r| r.rank).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn result_count_and_ordering() {
        let service = EmbeddingService::mock();
        let table = build_doc_embeddings(&corpus(), &service).unwrap();
        let results = table.semantic_search(&service, "missing employees", 10, None).unwrap();
        assert_eq!(results.len(), 4);
        assert!(results.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn candidate_subset_restricts_results() {
        let service = EmbeddingService::mock();
        let table = build_doc_embeddings(&corpus(), &service).unwrap();
        let subset = vec!["d2".to_string(), "d3".to_string()];
        let results = table
            .semantic_search(&service, "missing employees", 5, Some(&subset))
            .unwrap();
        assert_eq!(results.len(), 2);
        assert!(results.iter().all(|r| subset.contains(&r.doc_id)));
        let unknown = vec!["nope".to_string()];
        assert!(matches!(
            table.semantic_search(&service, "x", 5, Some(&unknown)),
            Err(SearchError::UnknownDocument(_))
        ));
    }

    #[test]
    fn rejects_bad_queries() {
        let service = EmbeddingService::mock();
        let table = build_doc_embeddings(&corpus(), &service).unwrap();
        assert!(matches!(
            table.semantic_search(&service, "  ", 5, None),
            Err(SearchError::EmptyQuery)
        ));
        assert!(matches!(
            table.semantic_search(&service, "x", 0, None),
            Err(SearchError::InvalidK)
        ));
    }

    #[test]
    fn empty_corpus_and_warm_rebuild() {
        let embedder = Arc::new(HashEmbedder::default());
        let service = EmbeddingService::new(embedder.clone());
        let empty = build_doc_embeddings(&CorpusIndex::default(), &service).unwrap();
        assert!(empty.is_empty());

        let index = corpus();
        let first = build_doc_embeddings(&index, &service).unwrap();
        let calls = embedder.calls();
        let second = build_doc_embeddings(&index, &service).unwrap();
        assert_eq!(embedder.calls(), calls);
        assert_eq!(first, second);
        assert!(second.covers(&index));
    }

    #[test]
    fn table_file_round_trips_exactly() {
        let service = EmbeddingService::mock();
        let table = build_doc_embeddings(&corpus(), &service).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("documents.jsonl");
        table.save(&path).unwrap();
        assert_eq!(DocEmbeddings::load(&path).unwrap(), table);
    }
}
