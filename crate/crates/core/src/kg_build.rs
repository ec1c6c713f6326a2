//! Knowledge-graph construction: LLM triple extraction per document, semantic
//! deduplication of the raw triples and provenance-carrying fact storage.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusIndex, Document};
use crate::providers::{
    content_hash, cosine_similarity, EmbeddingService, EmbeddingVector, GenerationRequest, Generator, ProviderError,
};
use crate::text::{fill_template, normalize_entity};
use crate::workers::parallel_map;

/// Extraction prompt shipped with the crate. Placeholders: `{title}`, `{text}`.
pub const DEFAULT_EXTRACTION_TEMPLATE: &str = include_str!("../templates/extraction.txt");

/// Field separator of the line-oriented triple format.
pub const TRIPLE_SEPARATOR: &str = " | ";

pub const FACTS_FILE: &str = "facts.jsonl";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum KgError {
    #[error("triple field {0} is empty")]
    EmptyField(&'static str),
    #[error("dedup threshold {name} = {value} is outside (0, 1]")]
    InvalidThreshold { name: &'static str, value: f64 },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot read fact store {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("duplicate fact id {0}")]
    DuplicateFact(String),
    #[error("fact {0} has no sources")]
    Unsupported(String),
}

/// One extracted `<entity, relationship, entity>` triple and its source.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RawTriple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub source_doc: String,
}

impl RawTriple {
    /// Build a triple from untrimmed parts, rejecting empty fields.
    pub fn new(subject: &str, predicate: &str, object: &str, source_doc: impl Into<String>) -> Result<Self, KgError> {
        let field = |name, value: &str| {
            let t = value.trim();
            if t.is_empty() {
                Err(KgError::EmptyField(name))
            } else {
                Ok(t.to_string())
            }
        };
        Ok(Self {
            subject: field("subject", subject)?,
            predicate: field("predicate", predicate)?,
            object: field("object", object)?,
            source_doc: source_doc.into(),
        })
    }

    fn form(&self) -> (&str, &str, &str) {
        (&self.subject, &self.predicate, &self.object)
    }
}

/// Parse an extraction response: one `subject | relationship | object` per
/// line. Blank lines are ignored; any other line that does not split into
/// exactly three non-empty fields counts as skipped.
pub fn parse_triples(response: &str, doc_id: &str) -> (Vec<RawTriple>, usize) {
    let mut triples = Vec::new();
    let mut skipped = 0;
    for line in response.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(TRIPLE_SEPARATOR).collect();
        match parts.as_slice() {
            [s, p, o] => match RawTriple::new(s, p, o, doc_id) {
                Ok(t) => triples.push(t),
                Err(_) => skipped += 1,
            },
            _ => skipped += 1,
        }
    }
    (triples, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExtractionConfig {
    pub template: String,
    pub model: String,
    pub temperature: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            template: DEFAULT_EXTRACTION_TEMPLATE.to_string(),
            model: String::new(),
            temperature: 0.0,
        }
    }
}

impl ExtractionConfig {
    pub fn prompt_for(&self, doc: &Document) -> String {
        fill_template(
            &self.template,
            &[("title", doc.title.as_str()), ("text", doc.body.as_str())],
        )
    }

    pub fn request_for(&self, doc: &Document, llm: &dyn Generator) -> Result<GenerationRequest, ProviderError> {
        let model = if self.model.is_empty() {
            llm.default_model().to_string()
        } else {
            self.model.clone()
        };
        GenerationRequest::new(self.prompt_for(doc), self.temperature, model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub triples: Vec<RawTriple>,
    pub skipped: usize,
}

/// Ask the LLM for the triples stated in one document.
pub fn extract_triples(
    doc: &Document,
    llm: &dyn Generator,
    config: &ExtractionConfig,
) -> Result<Extraction, ProviderError> {
    let request = config.request_for(doc, llm)?;
    let response = llm.generate(&request)?;
    let (triples, skipped) = parse_triples(&response.text, &doc.id);
    Ok(Extraction { triples, skipped })
}

/// Component-wise merge thresholds: two triples merge when their subjects and
/// objects are at least `entity`-similar and their predicates at least
/// `relation`-similar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DedupThresholds {
    pub entity: f64,
    pub relation: f64,
}

impl Default for DedupThresholds {
    fn default() -> Self {
        Self {
            entity: 0.90,
            relation: 0.85,
        }
    }
}

impl DedupThresholds {
    pub fn validate(&self) -> Result<(), KgError> {
        for (name, value) in [("entity", self.entity), ("relation", self.relation)] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(KgError::InvalidThreshold { name, value });
            }
        }
        Ok(())
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Interned strings with their embeddings and, per string, the sorted list of
/// strings within the similarity threshold (itself included when non-zero).
struct SimilarityTable {
    ids: HashMap<String, usize>,
    neighbors: Vec<Vec<usize>>,
}

impl SimilarityTable {
    fn build(strings: BTreeSet<&str>, embedder: &EmbeddingService, threshold: f64) -> Result<Self, ProviderError> {
        let strings: Vec<&str> = strings.into_iter().collect();
        let vectors = embedder.embed_many(&strings)?;
        let rows: Vec<usize> = (0..strings.len()).collect();
        let neighbors = parallel_map(&rows, embedder.max_in_flight(), |&i| similar_to(&vectors, i, threshold));
        Ok(Self {
            ids: strings.iter().enumerate().map(|(i, s)| (s.to_string(), i)).collect(),
            neighbors,
        })
    }

    fn id(&self, s: &str) -> usize {
        self.ids[s]
    }

    fn similar(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }
}

fn similar_to(vectors: &[EmbeddingVector], i: usize, threshold: f64) -> Vec<usize> {
    vectors
        .iter()
        .enumerate()
        .filter(|(_, v)| cosine_similarity(&vectors[i], v).expect("one provider, one dimension") >= threshold)
        .map(|(j, _)| j)
        .collect()
}

/// Partition `raw` into merge clusters: the transitive closure of the
/// pairwise merge predicate. Returns index lists into `raw`, each sorted, with
/// clusters ordered by their first index.
pub fn cluster_triples(
    raw: &[RawTriple],
    embedder: &EmbeddingService,
    thresholds: DedupThresholds,
) -> Result<Vec<Vec<usize>>, KgError> {
    thresholds.validate()?;
    // identical surface forms always merge; compare each form once
    let mut form_ids: HashMap<(&str, &str, &str), usize> = HashMap::new();
    let mut forms: Vec<(&str, &str, &str)> = Vec::new();
    let form_of: Vec<usize> = raw
        .iter()
        .map(|t| {
            *form_ids.entry(t.form()).or_insert_with(|| {
                forms.push(t.form());
                forms.len() - 1
            })
        })
        .collect();

    let entities = SimilarityTable::build(
        forms.iter().flat_map(|(s, _, o)| [*s, *o]).collect(),
        embedder,
        thresholds.entity,
    )?;
    let predicates = SimilarityTable::build(
        forms.iter().map(|(_, p, _)| *p).collect(),
        embedder,
        thresholds.relation,
    )?;

    let encoded: Vec<(usize, usize, usize)> = forms
        .iter()
        .map(|(s, p, o)| (entities.id(s), predicates.id(p), entities.id(o)))
        .collect();
    let mut by_subject: HashMap<usize, Vec<usize>> = HashMap::new();
    for (f, &(s, _, _)) in encoded.iter().enumerate() {
        by_subject.entry(s).or_default().push(f);
    }

    let mut uf = UnionFind::new(forms.len());
    for (f, &(s, p, o)) in encoded.iter().enumerate() {
        for &s2 in &entities.neighbors[s] {
            let Some(candidates) = by_subject.get(&s2) else {
                continue;
            };
            for &g in candidates {
                if g <= f {
                    continue;
                }
                let (_, p2, o2) = encoded[g];
                if entities.similar(o, o2) && predicates.similar(p, p2) {
                    uf.union(f, g);
                }
            }
        }
    }

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut cluster_of_root: HashMap<usize, usize> = HashMap::new();
    for (i, &f) in form_of.iter().enumerate() {
        let root = uf.find(f);
        let c = *cluster_of_root.entry(root).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[c].push(i);
    }
    Ok(clusters)
}

/// Pick a cluster's representative surface form: most frequent form, then the
/// form whose earliest source document id is smallest, then lexicographic.
pub fn select_representative<'a>(members: impl IntoIterator<Item = &'a RawTriple>) -> Option<&'a RawTriple> {
    let mut stats: BTreeMap<(&str, &str, &str), (usize, &str, &RawTriple)> = BTreeMap::new();
    for t in members {
        let entry = stats.entry(t.form()).or_insert((0, t.source_doc.as_str(), t));
        entry.0 += 1;
        if t.source_doc.as_str() < entry.1 {
            entry.1 = t.source_doc.as_str();
        }
    }
    stats
        .into_iter()
        .min_by(|(fa, (ca, da, _)), (fb, (cb, db, _))| cb.cmp(ca).then_with(|| da.cmp(db)).then_with(|| fa.cmp(fb)))
        .map(|(_, (_, _, t))| t)
}

/// Stable fact identifier: truncated content hash of the representative triple.
pub fn fact_id(subject: &str, predicate: &str, object: &str) -> String {
    let canonical = serde_json::to_string(&(subject, predicate, object)).expect("serializes");
    content_hash(canonical.as_bytes())[..16].to_string()
}

/// A deduplicated triple and the documents supporting it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub id: String,
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub sources: BTreeSet<String>,
    /// Number of distinct supporting documents.
    pub support: usize,
}

impl Fact {
    pub fn new(
        subject: impl Into<String>,
        predicate: impl Into<String>,
        object: impl Into<String>,
        sources: BTreeSet<String>,
    ) -> Self {
        let (subject, predicate, object) = (subject.into(), predicate.into(), object.into());
        Self {
            id: fact_id(&subject, &predicate, &object),
            support: sources.len(),
            subject,
            predicate,
            object,
            sources,
        }
    }

    /// "subject predicate object", the text facts are embedded as.
    pub fn text(&self) -> String {
        format!("{} {} {}", self.subject, self.predicate, self.object)
    }
}

/// The deduplicated knowledge graph with entity indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactStore {
    facts: BTreeMap<String, Fact>,
    entity_index: BTreeMap<String, BTreeSet<String>>,
    neighbors: BTreeMap<String, BTreeSet<String>>,
}

impl FactStore {
    pub fn from_facts(facts: impl IntoIterator<Item = Fact>) -> Result<Self, KgError> {
        let mut store = Self::default();
        for fact in facts {
            if fact.sources.is_empty() {
                return Err(KgError::Unsupported(fact.id));
            }
            let subject = normalize_entity(&fact.subject);
            let object = normalize_entity(&fact.object);
            for entity in [&subject, &object] {
                store
                    .entity_index
                    .entry(entity.clone())
                    .or_default()
                    .insert(fact.id.clone());
            }
            store
                .neighbors
                .entry(subject.clone())
                .or_default()
                .insert(object.clone());
            store.neighbors.entry(object).or_default().insert(subject);
            if store.facts.contains_key(&fact.id) {
                return Err(KgError::DuplicateFact(fact.id));
            }
            store.facts.insert(fact.id.clone(), fact);
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Fact> {
        self.facts.get(id)
    }

    /// Facts in id order.
    pub fn facts(&self) -> impl Iterator<Item = &Fact> {
        self.facts.values()
    }

    /// Normalized entity -> ids of the facts it appears in.
    pub fn entity_index(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.entity_index
    }

    /// Distinct entities sharing a fact with `entity` (normalized). A
    /// self-referencing fact makes an entity its own neighbor.
    pub fn neighbors(&self, entity: &str) -> Option<&BTreeSet<String>> {
        self.neighbors.get(entity)
    }

    /// Count of distinct neighbor entities.
    pub fn entity_degree(&self, entity: &str) -> usize {
        self.neighbors.get(entity).map_or(0, BTreeSet::len)
    }

    pub fn entity_degrees(&self) -> BTreeMap<&str, usize> {
        self.neighbors.iter().map(|(e, n)| (e.as_str(), n.len())).collect()
    }

    /// One raw triple per (fact, source) pair.
    pub fn flatten(&self) -> Vec<RawTriple> {
        self.facts
            .values()
            .flat_map(|f| {
                f.sources.iter().map(|src| RawTriple {
                    subject: f.subject.clone(),
                    predicate: f.predicate.clone(),
                    object: f.object.clone(),
                    source_doc: src.clone(),
                })
            })
            .collect()
    }

    /// Newline-delimited fact records sorted by id.
    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for fact in self.facts.values() {
            serde_json::to_writer(&mut out, fact)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn load(path: &Path) -> Result<Self, KgError> {
        let read_err = |message: String| KgError::Read {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let mut facts = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fact: Fact = serde_json::from_str(line).map_err(|e| read_err(format!("line {}: {e}", n + 1)))?;
            facts.push(fact);
        }
        Self::from_facts(facts)
    }
}

/// Group near-duplicate triples and keep one representative per group with
/// the union of their sources.
pub fn deduplicate_facts(
    raw: &[RawTriple],
    embedder: &EmbeddingService,
    thresholds: DedupThresholds,
) -> Result<FactStore, KgError> {
    let clusters = cluster_triples(raw, embedder, thresholds)?;
    let facts = clusters.iter().map(|members| {
        let triples = members.iter().map(|&i| &raw[i]);
        let rep = select_representative(triples.clone()).expect("clusters are non-empty");
        let sources: BTreeSet<String> = triples.map(|t| t.source_doc.clone()).collect();
        Fact::new(rep.subject.clone(), rep.predicate.clone(), rep.object.clone(), sources)
    });
    FactStore::from_facts(facts.collect::<Vec<_>>())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DocumentReport {
    pub id: String,
    pub triples: usize,
    pub skipped: usize,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BuildReport {
    pub documents: Vec<DocumentReport>,
    pub total_triples: usize,
    pub total_skipped: usize,
    pub failures: usize,
    pub facts: usize,
}

impl BuildReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut buf = serde_json::to_vec_pretty(self).expect("report serializes");
        buf.push(b'\n');
        buf
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KgBuildConfig {
    pub extraction: ExtractionConfig,
    pub thresholds: DedupThresholds,
}

/// Extract triples from every document, then deduplicate them. A document
/// whose extraction fails is recorded in the report and skipped.
pub fn build_kg(
    index: &CorpusIndex,
    llm: &dyn Generator,
    embedder: &EmbeddingService,
    config: &KgBuildConfig,
) -> Result<(FactStore, BuildReport), KgError> {
    config.thresholds.validate()?;
    let workers = if llm.order_sensitive() {
        1
    } else {
        embedder.max_in_flight()
    };
    let outcomes = parallel_map(index.documents(), workers, |doc| {
        extract_triples(doc, llm, &config.extraction)
    });

    let mut report = BuildReport::default();
    let mut raw = Vec::new();
    for (doc, outcome) in index.documents().iter().zip(outcomes) {
        let entry = match outcome {
            Ok(extraction) => {
                let entry = DocumentReport {
                    id: doc.id.clone(),
                    triples: extraction.triples.len(),
                    skipped: extraction.skipped,
                    ..Default::default()
                };
                raw.extend(extraction.triples);
                entry
            }
            Err(e) => DocumentReport {
                id: doc.id.clone(),
                failed: true,
                error: Some(e.to_string()),
                ..Default::default()
            },
        };
        report.total_triples += entry.triples;
        report.total_skipped += entry.skipped;
        report.failures += usize::from(entry.failed);
        report.documents.push(entry);
    }

    let store = deduplicate_facts(&raw, embedder, config.thresholds)?;
    report.facts = store.len();
    Ok((store, report))
}

/// Write `facts.jsonl` and `report.json` into `dir`, creating it if needed.
pub fn write_kg_artifacts(dir: &Path, store: &FactStore, report: &BuildReport) -> Result<(), KgError> {
    let write =
        |path: PathBuf, bytes: Vec<u8>| fs::write(&path, bytes).map_err(|source| KgError::Write { path, source });
    fs::create_dir_all(dir).map_err(|source| KgError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    write(dir.join(FACTS_FILE), store.to_jsonl())?;
    write(dir.join(REPORT_FILE), report.to_json())
}
