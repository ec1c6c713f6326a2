//! Read side of the knowledge graph: entity lookup, context-ranked fact
//! lists, connected / similar entity surfacing and fact provenance.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusIndex, Document};
use crate::kg_build::{Fact, FactStore};
use crate::piles::Pile;
use crate::providers::{rank_by_similarity, EmbeddingService, ProviderError};
use crate::text::normalize_entity;

/// Facts shown per list.
pub const DEFAULT_FACT_LIMIT: usize = 5;
/// Entries per connected / similar entity list.
pub const DEFAULT_ENTITY_CAP: usize = 5;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("unknown fact id {0:?}")]
    UnknownFact(String),
    #[error("fact {fact} cites document {doc:?} missing from the corpus")]
    DanglingSource { fact: String, doc: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RankedFact {
    pub fact: Fact,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EntityContext {
    pub entity: String,
    /// Neighbors with their degree, most connected first.
    pub connected: Vec<(String, usize)>,
    /// Non-neighbor entities by name-embedding similarity.
    pub similar: Vec<(String, f64)>,
}

/// True when the tokens of `needle` occur contiguously among those of
/// `entity`. Both must be normalized.
pub fn token_contains(entity: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let hay: Vec<&str> = entity.split(' ').collect();
    let want: Vec<&str> = needle.split(' ').collect();
    hay.windows(want.len()).any(|w| w == want.as_slice())
}

/// Facts whose subject or object matches `name` exactly or contains it as a
/// token run. Exact matches first, then by support descending, then by id.
pub fn search_entity<'a>(store: &'a FactStore, name: &str) -> Vec<&'a Fact> {
    let query = normalize_entity(name);
    if query.is_empty() {
        return Vec::new();
    }
    let mut hits: Vec<(bool, &Fact)> = Vec::new();
    let mut seen = BTreeSet::new();
    // exact entity first so a fact matched both ways is flagged exact
    let exact = store.entity_index().get(&query).into_iter().map(|ids| (true, ids));
    let partial = store
        .entity_index()
        .iter()
        .filter(|(entity, _)| **entity != query && token_contains(entity, &query))
        .map(|(_, ids)| (false, ids));
    for (is_exact, ids) in exact.chain(partial) {
        for id in ids {
            if seen.insert(id.as_str()) {
                hits.push((is_exact, store.get(id).expect("indexed fact exists")));
            }
        }
    }
    hits.sort_by(|(ea, fa), (eb, fb)| {
        eb.cmp(ea)
            .then_with(|| fb.support.cmp(&fa.support))
            .then_with(|| fa.id.cmp(&fb.id))
    });
    hits.into_iter().map(|(_, f)| f).collect()
}

/// Rank `facts` by similarity of their "subject predicate object" text to
/// `context`, keeping the top `k` (ties by fact id).
pub fn rank_facts(
    facts: &[&Fact],
    context: &str,
    embedder: &EmbeddingService,
    k: usize,
) -> Result<Vec<RankedFact>, ProviderError> {
    let texts: Vec<String> = facts.iter().map(|f| f.text()).collect();
    let vectors = embedder.embed_many(&texts)?;
    let query = embedder.embed_text(context)?;
    let ranked = rank_by_similarity(
        &query,
        facts.iter().enumerate().map(|(i, f)| ((f.id.as_str(), i), &vectors[i])),
        k,
    )?;
    Ok(ranked
        .into_iter()
        .enumerate()
        .map(|(r, ((_, i), score))| RankedFact {
            fact: facts[i].clone(),
            score,
            rank: r + 1,
        })
        .collect())
}

/// Connected and semantically similar entities around `entity`.
pub fn entity_context(
    store: &FactStore,
    entity: &str,
    embedder: &EmbeddingService,
    cap_connected: usize,
    cap_similar: usize,
) -> Result<EntityContext, ProviderError> {
    let entity = normalize_entity(entity);
    let neighbors: BTreeSet<&str> = store
        .neighbors(&entity)
        .map(|n| n.iter().map(String::as_str).filter(|n| *n != entity).collect())
        .unwrap_or_default();

    let mut connected: Vec<(String, usize)> = neighbors
        .iter()
        .map(|n| (n.to_string(), store.entity_degree(n)))
        .collect();
    connected.sort_by(|(na, da), (nb, db)| db.cmp(da).then_with(|| na.cmp(nb)));
    connected.truncate(cap_connected);

    let candidates: Vec<&str> = store
        .entity_index()
        .keys()
        .map(String::as_str)
        .filter(|e| *e != entity && !neighbors.contains(e))
        .collect();
    let vectors = embedder.embed_many(&candidates)?;
    let query = embedder.embed_text(&entity)?;
    let similar = rank_by_similarity(&query, candidates.iter().copied().zip(&vectors), cap_similar)?
        .into_iter()
        .map(|(e, s)| (e.to_string(), s))
        .collect();

    Ok(EntityContext {
        entity,
        connected,
        similar,
    })
}

/// Source document ids of a fact, sorted.
pub fn fact_sources<'a>(store: &'a FactStore, fact_id: &str) -> Result<Vec<&'a str>, QueryError> {
    store
        .get(fact_id)
        .map(|f| f.sources.iter().map(String::as_str).collect())
        .ok_or_else(|| QueryError::UnknownFact(fact_id.to_string()))
}

/// [`fact_sources`] resolved to full documents.
pub fn resolve_sources<'a>(
    store: &FactStore,
    corpus: &'a CorpusIndex,
    fact_id: &str,
) -> Result<Vec<&'a Document>, QueryError> {
    fact_sources(store, fact_id)?
        .into_iter()
        .map(|id| {
            corpus.get(id).ok_or_else(|| QueryError::DanglingSource {
                fact: fact_id.to_string(),
                doc: id.to_string(),
            })
        })
        .collect()
}

/// Text facts are ranked against for a pile: its latest LLM response when it
/// has one, else the titles and bodies of its documents.
pub fn ranking_context(pile: &Pile, corpus: &CorpusIndex) -> String {
    if let Some(record) = pile.evidence.last() {
        return record.response.clone();
    }
    pile.doc_ids
        .iter()
        .filter_map(|id| corpus.get(id))
        .map(|d| format!("{}\n{}", d.title, d.body))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fact(s: &str, p: &str, o: &str, sources: &[&str]) -> Fact {
        Fact::new(s, p, o, sources.iter().map(|x| x.to_string()).collect())
    }

    fn small_store() -> FactStore {
        FactStore::from_facts([
            fact("john", "likes", "sally", &["d1"]),
            fact("sally", "trusts", "bob", &["d1", "d2"]),
            fact("Edvard Vann", "investigates", "kidnapping", &["d3"]),
            fact("Vann", "works for", "POK", &["d4"]),
        ])
        .unwrap()
    }

    #[test]
    fn token_containment() {
        assert!(token_contains("edvard vann", "vann"));
        assert!(token_contains("edvard vann", "edvard vann"));
        assert!(!token_contains("edvard vann", "van"));
        assert!(!token_contains("vann", "edvard vann"));
        assert!(!token_contains("a b c", "a c"));
    }

    #[test]
    fn search_entity_hand_fixture() {
        let store = small_store();
        let found = search_entity(&store, "Sally");
        let mut triples: Vec<(&str, &str, &str)> = found
            .iter()
            .map(|f| (f.subject.as_str(), f.predicate.as_str(), f.object.as_str()))
            .collect();
        // support 2 first
        assert_eq!(triples[0], ("sally", "trusts", "bob"));
        triples.sort();
        assert_eq!(triples, [("john", "likes", "sally"), ("sally", "trusts", "bob")]);
        assert!(search_entity(&store, "nobody").is_empty());
        assert!(search_entity(&store, "  ").is_empty());
    }

    #[test]
    fn exact_matches_rank_before_token_matches() {
        let store = small_store();
        let found = search_entity(&store, "vann");
        assert_eq!(found.len(), 2);
        assert_eq!(found[0].subject, "Vann");
        assert_eq!(found[1].subject, "Edvard Vann");
    }

    #[test]
    fn rank_facts_caps_at_k() {
        let facts: Vec<Fact> = (0..7).map(|i| fact(&format!("e{i}"), "r", "x", &["d1"])).collect();
        let refs: Vec<&Fact> = facts.iter().collect();
        let service = EmbeddingService::mock();
        let ranked = rank_facts(&refs, "e3 r x", &service, DEFAULT_FACT_LIMIT).unwrap();
        assert_eq!(ranked.len(), 5);
        assert_eq!(ranked[0].fact.subject, "e3");
        assert!((ranked[0].score - 1.0).abs() < 1e-9);
        assert_eq!(ranked.iter().map(|r| r.rank).collect::<Vec<_>>(), [1, 2, 3, 4, 5]);

        let three = rank_facts(&refs[..3], "anything", &service, DEFAULT_FACT_LIMIT).unwrap();
        assert_eq!(three.len(), 3);
        assert!(three.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(rank_facts(&[], "ctx", &service, 5).unwrap().is_empty());
    }

    #[test]
    fn star_graph_context() {
        let mut facts = Vec::new();
        for leaf in ["b", "c", "d", "e", "f"] {
            facts.push(fact("a", "links", leaf, &["d1"]));
        }
        facts.push(fact("g", "links", "h", &["d2"]));
        let store = FactStore::from_facts(facts).unwrap();
        let service = EmbeddingService::mock();

        let ctx = entity_context(&store, "b", &service, 5, 5).unwrap();
        assert_eq!(ctx.connected, vec![("a".to_string(), 5)]);
        assert!(ctx.similar.iter().all(|(e, _)| e != "a" && e != "b"));

        let center = entity_context(&store, "A", &service, 3, 5).unwrap();
        assert_eq!(center.entity, "a");
        assert_eq!(center.connected.len(), 3);
        assert_eq!(center.connected[0], ("b".to_string(), 1));
        // only g and h are not neighbors of a
        let similar: BTreeSet<&str> = center.similar.iter().map(|(e, _)| e.as_str()).collect();
        assert_eq!(similar, BTreeSet::from(["g", "h"]));

        let unknown = entity_context(&store, "zzz", &service, 5, 10).unwrap();
        assert!(unknown.connected.is_empty());
        assert_eq!(unknown.similar.len(), 8);
    }

    #[test]
    fn sources_are_sorted_and_resolvable() {
        let store = small_store();
        let id = &search_entity(&store, "bob")[0].id;
        assert_eq!(fact_sources(&store, id).unwrap(), ["d1", "d2"]);
        assert!(matches!(fact_sources(&store, "nope"), Err(QueryError::UnknownFact(_))));

        let corpus = CorpusIndex::from_documents(vec![Document::new("d1", "t", "x")]).unwrap();
        assert!(matches!(
            resolve_sources(&store, &corpus, id),
            Err(QueryError::DanglingSource { .. })
        ));
        let john = &search_entity(&store, "john")[0].id;
        let docs = resolve_sources(&store, &corpus, john).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].id, "d1");
    }
}
