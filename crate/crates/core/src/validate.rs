//! Grounding checks for LLM responses: highlight knowledge-graph entities in
//! the text, align response sentences with pile sentences, and suggest
//! further corpus documents.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusIndex;
use crate::kg_build::FactStore;
use crate::piles::Pile;
use crate::providers::{cosine_similarity, EmbeddingService, ProviderError};
use crate::search::{DocEmbeddings, SearchError};
use crate::text::{lower_char, split_sentences};

/// Links scoring below this are dropped.
pub const DEFAULT_LINK_FLOOR: f64 = 0.15;
/// Documents considered per suggestion round.
pub const DEFAULT_SUGGEST_K: usize = 5;

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("pile {0:?} has no documents")]
    EmptyPile(String),
    #[error("response is empty")]
    EmptyResponse,
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EntitySpan {
    /// Char offset of the first matched char.
    pub start: usize,
    /// Char offset one past the match.
    pub end: usize,
    pub entity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SentenceLink {
    pub response_sentence_index: usize,
    pub doc_id: String,
    pub doc_sentence_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Suggestion {
    pub doc_id: String,
    pub score: f64,
    pub already_in_pile: bool,
    pub added: bool,
}

/// Length in chars of a match of `entity` starting at `start`, if any.
/// A space in the entity matches one or more whitespace chars; word
/// boundaries are required wherever the entity begins or ends with an
/// alphanumeric char.
fn match_at(text: &[char], start: usize, entity: &[char]) -> Option<usize> {
    let first = *entity.first()?;
    if first.is_alphanumeric() && start > 0 && text[start - 1].is_alphanumeric() {
        return None;
    }
    let mut j = start;
    for &c in entity {
        if c == ' ' {
            let ws_start = j;
            while j < text.len() && text[j].is_whitespace() {
                j += 1;
            }
            if j == ws_start {
                return None;
            }
        } else {
            if j >= text.len() || lower_char(text[j]) != c {
                return None;
            }
            j += 1;
        }
    }
    let last = *entity.last().expect("non-empty");
    if last.is_alphanumeric() && j < text.len() && text[j].is_alphanumeric() {
        return None;
    }
    Some(j - start)
}

/// Every knowledge-graph entity occurring in `response`, case-insensitively
/// and on word boundaries. Overlaps resolve to the longest match (then the
/// earliest); spans come back in text order with char offsets.
pub fn extract_entities(response: &str, store: &FactStore) -> Vec<EntitySpan> {
    let text: Vec<char> = response.chars().collect();
    let entities: Vec<(&str, Vec<char>)> = store
        .entity_index()
        .keys()
        .filter(|e| !e.is_empty())
        .map(|e| (e.as_str(), e.chars().collect()))
        .collect();

    let mut candidates = Vec::new();
    for start in 0..text.len() {
        let head = lower_char(text[start]);
        for (name, chars) in &entities {
            if chars[0] != head {
                continue;
            }
            if let Some(len) = match_at(&text, start, chars) {
                candidates.push((start, start + len, *name));
            }
        }
    }
    candidates.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)).then(a.2.cmp(b.2)));

    let mut taken: Vec<(usize, usize, &str)> = Vec::new();
    for c in candidates {
        if taken.iter().all(|t| c.1 <= t.0 || t.1 <= c.0) {
            taken.push(c);
        }
    }
    taken.sort_by_key(|t| t.0);
    taken
        .into_iter()
        .map(|(start, end, entity)| EntitySpan {
            start,
            end,
            entity: entity.to_string(),
        })
        .collect()
}

/// Link each response sentence to its most similar sentence among the pile's
/// documents. Ties go to the smaller doc id, then the earlier sentence; links
/// scoring below `floor` are omitted.
pub fn link_sentences(
    response: &str,
    pile: &Pile,
    corpus: &CorpusIndex,
    embedder: &EmbeddingService,
    floor: f64,
) -> Result<Vec<SentenceLink>, ValidateError> {
    if pile.doc_ids.is_empty() {
        return Err(ValidateError::EmptyPile(pile.id.clone()));
    }
    let response_sentences = split_sentences(response);
    if response_sentences.is_empty() {
        return Ok(Vec::new());
    }
    let doc_ids: BTreeSet<&str> = pile.doc_ids.iter().map(String::as_str).collect();
    let mut targets: Vec<(&str, usize, String)> = Vec::new();
    for id in doc_ids {
        let doc = corpus
            .get(id)
            .ok_or_else(|| ValidateError::UnknownDocument(id.to_string()))?;
        for (i, s) in split_sentences(&doc.body).into_iter().enumerate() {
            targets.push((id, i, s.text));
        }
    }
    let target_texts: Vec<&str> = targets.iter().map(|t| t.2.as_str()).collect();
    let target_vecs = embedder.embed_many(&target_texts)?;
    let response_texts: Vec<&str> = response_sentences.iter().map(|s| s.text.as_str()).collect();
    let response_vecs = embedder.embed_many(&response_texts)?;

    let mut links = Vec::new();
    for (ri, rv) in response_vecs.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (ti, tv) in target_vecs.iter().enumerate() {
            let score = cosine_similarity(rv, tv)?;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((ti, score));
            }
        }
        if let Some((ti, score)) = best.filter(|&(_, s)| s >= floor) {
            links.push(SentenceLink {
                response_sentence_index: ri,
                doc_id: targets[ti].0.to_string(),
                doc_sentence_index: targets[ti].1,
                score,
            });
        }
    }
    Ok(links)
}

/// Rank the whole corpus against `response`, keep the top `k`, and flag which
/// of those are already pile members. Does not touch the pile.
pub fn rank_suggestions(
    response: &str,
    pile: &Pile,
    embeddings: &DocEmbeddings,
    embedder: &EmbeddingService,
    k: usize,
) -> Result<Vec<Suggestion>, ValidateError> {
    if response.trim().is_empty() {
        return Err(ValidateError::EmptyResponse);
    }
    let ranked = embeddings.semantic_search(embedder, response, k, None)?;
    Ok(ranked
        .into_iter()
        .map(|r| {
            let member = pile.contains(&r.doc_id);
            Suggestion {
                doc_id: r.doc_id,
                score: r.score,
                already_in_pile: member,
                added: !member,
            }
        })
        .collect())
}

/// [`rank_suggestions`], then append the non-members to the pile in rank
/// order. Returns all `k` suggestions.
pub fn suggest_documents(
    response: &str,
    pile: &mut Pile,
    embeddings: &DocEmbeddings,
    embedder: &EmbeddingService,
    k: usize,
) -> Result<Vec<Suggestion>, ValidateError> {
    let suggestions = rank_suggestions(response, pile, embeddings, embedder, k)?;
    pile.push_new(suggestions.iter().filter(|s| s.added).map(|s| s.doc_id.clone()));
    Ok(suggestions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::kg_build::Fact;
    use crate::search::build_doc_embeddings;

    fn store(entities: &[(&str, &str)]) -> FactStore {
        FactStore::from_facts(
            entities
                .iter()
                .map(|(s, o)| Fact::new(*s, "rel", *o, BTreeSet::from(["d1".to_string()]))),
        )
        .unwrap()
    }

    fn pile(ids: &[&str]) -> Pile {
        Pile {
            id: "p1".into(),
            name: "p".into(),
            position: 0,
            doc_ids: ids.iter().map(|s| s.to_string()).collect(),
            evidence: Vec::new(),
        }
    }

    fn slice(text: &str, span: &EntitySpan) -> String {
        text.chars().skip(span.start).take(span.end - span.start).collect()
    }

    #[test]
    fn highlights_case_insensitively() {
        let kg = store(&[("Edvard Vann", "kidnapping")]);
        let text = "Police say Edvard  Vann was seen near the Kidnapping site.";
        let spans = extract_entities(text, &kg);
        assert_eq!(spans.len(), 2);
        assert_eq!(slice(text, &spans[0]), "Edvard  Vann");
        assert_eq!(spans[0].entity, "edvard vann");
        assert_eq!(slice(text, &spans[1]), "Kidnapping");
        assert!(extract_entities("nothing relevant here", &kg).is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let kg = store(&[("vann", "edvard vann")]);
        let spans = extract_entities("edvard vann", &kg);
        assert_eq!(
            spans,
            [EntitySpan {
                start: 0,
                end: 11,
                entity: "edvard vann".into()
            }]
        );
        let spans = extract_entities("Vann, then edvard vann.", &kg);
        assert_eq!(
            spans.iter().map(|s| s.entity.as_str()).collect::<Vec<_>>(),
            ["vann", "edvard vann"]
        );
    }

    #[test]
    fn respects_word_boundaries_and_char_offsets() {
        let kg = store(&[("pok", "u.s.")]);
        let text = "Pokémon and Pokey ignore the POK; ünï U.S. policy";
        let spans = extract_entities(text, &kg);
        let got: Vec<String> = spans.iter().map(|s| slice(text, s)).collect();
        assert_eq!(got, ["POK", "U.S."]);
    }

    fn link_fixture() -> CorpusIndex {
        CorpusIndex::from_documents(vec![
            Document::new(
                "d1",
                "one",
                "The ferry left at dawn. Officials met in Abila. Nothing else happened.",
            ),
            Document::new(
                "d2",
                "two",
                "Protesters gathered near the capitol building. The ferry left at dawn.",
            ),
            Document::new("d3", "three", "Unrelated text about weather patterns."),
        ])
        .unwrap()
    }

    #[test]
    fn verbatim_sentence_links_to_origin() {
        let c = link_fixture();
        let embedder = EmbeddingService::mock();
        let response = "Protesters gathered near the capitol building. Zebra xylophone quantum.";
        let links = link_sentences(response, &pile(&["d2", "d1"]), &c, &embedder, DEFAULT_LINK_FLOOR).unwrap();
        assert_eq!(links.len(), 1);
        assert_eq!(links[0].doc_id, "d2");
        assert_eq!(links[0].doc_sentence_index, 0);
        assert!((links[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ties_go_to_earlier_doc_id() {
        let c = link_fixture();
        let embedder = EmbeddingService::mock();
        // identical sentence in d1[0] and d2[1]
        let links = link_sentences("The ferry left at dawn.", &pile(&["d2", "d1"]), &c, &embedder, 0.15).unwrap();
        assert_eq!((links[0].doc_id.as_str(), links[0].doc_sentence_index), ("d1", 0));
    }

    #[test]
    fn link_edge_cases() {
        let c = link_fixture();
        let embedder = EmbeddingService::mock();
        assert!(link_sentences("", &pile(&["d1"]), &c, &embedder, 0.15)
            .unwrap()
            .is_empty());
        assert!(matches!(
            link_sentences("Text.", &pile(&[]), &c, &embedder, 0.15),
            Err(ValidateError::EmptyPile(_))
        ));
        assert!(matches!(
            link_sentences("Text.", &pile(&["d9"]), &c, &embedder, 0.15),
            Err(ValidateError::UnknownDocument(_))
        ));
    }

    fn suggest_fixture() -> (CorpusIndex, DocEmbeddings, EmbeddingService) {
        let docs = (0..8)
            .map(|i| {
                let body = (0..=i).map(|j| format!("w{j}")).collect::<Vec<_>>().join(" ");
                Document::new(format!("d{i}"), "t", body)
            })
            .collect();
        let c = CorpusIndex::from_documents(docs).unwrap();
        let embedder = EmbeddingService::mock();
        let table = build_doc_embeddings(&c, &embedder).unwrap();
        (c, table, embedder)
    }

    #[test]
    fn two_members_in_top_five_means_three_added() {
        let (_, table, embedder) = suggest_fixture();
        let response = "w0 w1 w2 w3";
        let top: Vec<String> = table
            .semantic_search(&embedder, response, 5, None)
            .unwrap()
            .into_iter()
            .map(|r| r.doc_id)
            .collect();
        let mut p = pile(&[&top[1], &top[3]]);
        let suggestions = suggest_documents(response, &mut p, &table, &embedder, DEFAULT_SUGGEST_K).unwrap();
        assert_eq!(suggestions.len(), 5);
        assert_eq!(suggestions.iter().filter(|s| s.added).count(), 3);
        assert_eq!(suggestions.iter().filter(|s| s.already_in_pile).count(), 2);
        assert_eq!(p.doc_ids, [1, 3, 0, 2, 4].map(|i| top[i].clone()));
        assert!(suggestions.iter().all(|s| s.added != s.already_in_pile));
    }

    #[test]
    fn saturated_pile_gains_nothing() {
        let (c, table, embedder) = suggest_fixture();
        let all: Vec<&str> = c.documents().iter().map(|d| d.id.as_str()).collect();
        let mut p = pile(&all);
        let suggestions = suggest_documents("w3 w4", &mut p, &table, &embedder, 5).unwrap();
        assert_eq!(suggestions.len(), 5);
        assert!(suggestions.iter().all(|s| s.already_in_pile && !s.added));
        assert_eq!(p.doc_ids.len(), 8);
        assert!(matches!(
            suggest_documents("  ", &mut p, &table, &embedder, 5),
            Err(ValidateError::EmptyResponse)
        ));
    }
}
