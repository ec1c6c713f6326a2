//! Analyst workspace: named piles of documents, prompt assembly for the nine
//! sensemaking tasks, and the append-only evidence history of task runs.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusIndex, Document};
use crate::providers::{GenerationRequest, GenerationResult, Generator, ProviderError, TEMPERATURE_RANGE};
use crate::text::fill_template;
use crate::validate::{EntitySpan, SentenceLink, Suggestion};

/// Task template fixture compiled into the crate.
pub const DEFAULT_TASK_TEMPLATES: &str = include_str!("../templates/tasks.json");
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const WORKSPACE_FILE: &str = "workspace.json";

#[derive(Debug, Error)]
pub enum PileError {
    #[error("unknown pile {0:?}")]
    UnknownPile(String),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("pile {pile:?} has no evidence record {evidence:?}")]
    UnknownEvidence { pile: String, evidence: String },
    #[error("invalid pile ordering: {0}")]
    InvalidOrdering(String),
    #[error("pile name is empty")]
    EmptyName,
    #[error("{0} needs at least one document in the pile")]
    EmptyPile(TaskKind),
    #[error("{kind} requires the {param} parameter")]
    MissingParam { kind: TaskKind, param: &'static str },
    #[error("invalid task parameters: {0}")]
    InvalidParams(String),
    #[error("invalid workspace: {0}")]
    InvalidWorkspace(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("workspace file: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Analyze,
    Summarize,
    Extract,
    Classify,
    Generate,
    List,
    Explain,
    Answer,
    Custom,
}

impl TaskKind {
    pub const ALL: [TaskKind; 9] = [
        TaskKind::Analyze,
        TaskKind::Summarize,
        TaskKind::Extract,
        TaskKind::Classify,
        TaskKind::Generate,
        TaskKind::List,
        TaskKind::Explain,
        TaskKind::Answer,
        TaskKind::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Analyze => "Analyze",
            TaskKind::Summarize => "Summarize",
            TaskKind::Extract => "Extract",
            TaskKind::Classify => "Classify",
            TaskKind::Generate => "Generate",
            TaskKind::List => "List",
            TaskKind::Explain => "Explain",
            TaskKind::Answer => "Answer",
            TaskKind::Custom => "Custom",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown task kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_types: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concepts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_text: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Empty selects the provider's default model.
    #[serde(default)]
    pub model: String,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            question: None,
            entity_types: None,
            concepts: None,
            custom_text: None,
            temperature: DEFAULT_TEMPERATURE,
            model: String::new(),
        }
    }
}

impl TaskParams {
    pub fn with_question(mut self, q: impl Into<String>) -> Self {
        self.question = Some(q.into());
        self
    }

    pub fn with_entity_types<S: Into<String>>(mut self, types: impl IntoIterator<Item = S>) -> Self {
        self.entity_types = Some(types.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_concepts<S: Into<String>>(mut self, concepts: impl IntoIterator<Item = S>) -> Self {
        self.concepts = Some(concepts.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_custom_text(mut self, text: impl Into<String>) -> Self {
        self.custom_text = Some(text.into());
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }
}

fn non_blank(s: &Option<String>) -> Option<&str> {
    s.as_deref().filter(|s| !s.trim().is_empty())
}

fn non_blank_list(items: &Option<Vec<String>>) -> Option<String> {
    let kept: Vec<&str> = items
        .iter()
        .flatten()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect();
    (!kept.is_empty()).then(|| kept.join(", "))
}

/// Instruction stems for the nine tasks plus the shared preamble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskTemplates {
    pub preamble: String,
    pub analyze: String,
    pub summarize: String,
    /// `{entity_types}` placeholder.
    pub extract: String,
    pub classify: String,
    pub generate: String,
    pub list: String,
    /// `{concepts}` placeholder.
    pub explain: String,
    /// `{question}` placeholder.
    pub answer: String,
    /// `{custom}` placeholder.
    pub custom: String,
    pub default_entity_types: Vec<String>,
}

impl Default for TaskTemplates {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TASK_TEMPLATES).expect("bundled task templates parse")
    }
}

impl TaskTemplates {
    /// Load overrides from a JSON file; fields it omits keep their defaults.
    pub fn load(path: &Path) -> Result<Self, PileError> {
        let invalid =
            |e: serde_json::Error| PileError::InvalidParams(format!("task templates {}: {e}", path.display()));
        let overrides: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&fs::read_to_string(path)?).map_err(invalid)?;
        let mut merged = serde_json::to_value(Self::default()).expect("templates serialize");
        merged.as_object_mut().expect("object").extend(overrides);
        serde_json::from_value(merged).map_err(invalid)
    }

    fn stem(&self, kind: TaskKind) -> &str {
        match kind {
            TaskKind::Analyze => &self.analyze,
            TaskKind::Summarize => &self.summarize,
            TaskKind::Extract => &self.extract,
            TaskKind::Classify => &self.classify,
            TaskKind::Generate => &self.generate,
            TaskKind::List => &self.list,
            TaskKind::Explain => &self.explain,
            TaskKind::Answer => &self.answer,
            TaskKind::Custom => &self.custom,
        }
    }

    /// Task instruction with parameters interpolated.
    pub fn instruction(&self, kind: TaskKind, params: &TaskParams) -> Result<String, PileError> {
        validate_params(kind, params)?;
        let missing = |param| PileError::MissingParam { kind, param };
        let value = match kind {
            TaskKind::Extract => Some((
                "entity_types",
                non_blank_list(&params.entity_types).unwrap_or_else(|| self.default_entity_types.join(", ")),
            )),
            TaskKind::Explain => Some((
                "concepts",
                non_blank_list(&params.concepts).ok_or_else(|| missing("concepts"))?,
            )),
            TaskKind::Answer => Some((
                "question",
                non_blank(&params.question)
                    .ok_or_else(|| missing("question"))?
                    .to_string(),
            )),
            TaskKind::Custom => Some((
                "custom",
                non_blank(&params.custom_text)
                    .ok_or_else(|| missing("customText"))?
                    .to_string(),
            )),
            _ => None,
        };
        let stem = self.stem(kind);
        Ok(match value {
            Some((name, v)) => fill_template(stem, &[(name, v.as_str())]),
            None => stem.to_string(),
        })
    }
}

/// Parameter checks that do not depend on the templates.
pub fn validate_params(kind: TaskKind, params: &TaskParams) -> Result<(), PileError> {
    let (lo, hi) = TEMPERATURE_RANGE;
    if !(lo..=hi).contains(&params.temperature) {
        return Err(PileError::InvalidParams(format!(
            "temperature {} outside [{lo}, {hi}]",
            params.temperature
        )));
    }
    let missing = |param| Err(PileError::MissingParam { kind, param });
    match kind {
        TaskKind::Explain if non_blank_list(&params.concepts).is_none() => missing("concepts"),
        TaskKind::Answer if non_blank(&params.question).is_none() => missing("question"),
        TaskKind::Custom if non_blank(&params.custom_text).is_none() => missing("customText"),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssembledPrompt {
    pub text: String,
    /// Set for a Custom task run over an empty pile.
    pub empty_pile: bool,
}

/// Separator line that introduces each document in a prompt.
pub fn document_header(doc: &Document) -> String {
    format!("=== DOCUMENT: {} \u{2014} {} ===", doc.id, doc.title)
}

/// Build the full prompt: preamble, then each document behind its header line
/// followed by a blank line, then the task instruction.
pub fn assemble_prompt(
    docs: &[&Document],
    kind: TaskKind,
    params: &TaskParams,
    templates: &TaskTemplates,
) -> Result<AssembledPrompt, PileError> {
    if docs.is_empty() && kind != TaskKind::Custom {
        return Err(PileError::EmptyPile(kind));
    }
    let instruction = templates.instruction(kind, params)?;
    let mut text = String::new();
    text.push_str(&templates.preamble);
    text.push_str("\n\n");
    for doc in docs {
        text.push_str(&document_header(doc));
        text.push('\n');
        text.push_str(&doc.body);
        text.push_str("\n\n");
    }
    text.push_str(&instruction);
    Ok(AssembledPrompt {
        text,
        empty_pile: docs.is_empty(),
    })
}

fn resolve_docs<'a>(corpus: &'a CorpusIndex, ids: &[String]) -> Result<Vec<&'a Document>, PileError> {
    ids.iter()
        .map(|id| corpus.get(id).ok_or_else(|| PileError::UnknownDocument(id.clone())))
        .collect()
}

/// Grounding annotations attached to an evidence record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Annotations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<EntitySpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<SentenceLink>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestions: Option<Vec<Suggestion>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvidenceRecord {
    pub id: String,
    pub task_kind: TaskKind,
    pub params: TaskParams,
    /// Pile membership when the task ran, in prompt order.
    pub doc_ids: Vec<String>,
    pub prompt: String,
    pub response: String,
    /// Model that answered (the provider default when params left it empty).
    pub model: String,
    pub request_digest: String,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_pile_warning: bool,
    #[serde(default)]
    pub annotations: Annotations,
}

impl EvidenceRecord {
    /// Rebuild the prompt from the recorded inputs.
    pub fn reassemble(&self, corpus: &CorpusIndex, templates: &TaskTemplates) -> Result<String, PileError> {
        let docs = resolve_docs(corpus, &self.doc_ids)?;
        Ok(assemble_prompt(&docs, self.task_kind, &self.params, templates)?.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Pile {
    pub id: String,
    pub name: String,
    pub position: usize,
    pub doc_ids: Vec<String>,
    pub evidence: Vec<EvidenceRecord>,
}

impl Pile {
    pub fn contains(&self, doc_id: &str) -> bool {
        self.doc_ids.iter().any(|d| d == doc_id)
    }

    pub fn evidence(&self, id: &str) -> Result<&EvidenceRecord, PileError> {
        self.evidence
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| PileError::UnknownEvidence {
                pile: self.id.clone(),
                evidence: id.to_string(),
            })
    }

    fn evidence_mut(&mut self, id: &str) -> Result<&mut EvidenceRecord, PileError> {
        let pile = self.id.clone();
        self.evidence
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or(PileError::UnknownEvidence {
                pile,
                evidence: id.to_string(),
            })
    }

    /// Append ids not yet present, in the given order. Returns how many were
    /// added.
    pub(crate) fn push_new(&mut self, ids: impl IntoIterator<Item = String>) -> usize {
        let mut added = 0;
        for id in ids {
            if !self.contains(&id) {
                self.doc_ids.push(id);
                added += 1;
            }
        }
        added
    }
}

pub trait Clock: Send + Sync + fmt::Debug {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Clock frozen at one instant, for reproducible workspace files.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

/// A task whose prompt is assembled but whose provider call has not happened
/// yet. Lets callers run the slow call without holding the workspace.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub pile_id: String,
    pub kind: TaskKind,
    pub params: TaskParams,
    pub doc_ids: Vec<String>,
    pub prompt: AssembledPrompt,
}

impl PreparedTask {
    pub fn request(&self, llm: &dyn Generator) -> Result<GenerationRequest, ProviderError> {
        let model = if self.params.model.is_empty() {
            llm.default_model()
        } else {
            &self.params.model
        };
        GenerationRequest::new(self.prompt.text.clone(), self.params.temperature, model)
    }

    pub fn execute(&self, llm: &dyn Generator) -> Result<GenerationResult, ProviderError> {
        llm.generate(&self.request(llm)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WorkspaceData {
    id: String,
    created_at: DateTime<Utc>,
    updated_at: DateTime<Utc>,
    piles: Vec<Pile>,
    next_pile_id: u64,
    next_evidence_id: u64,
}

/// Ordered piles plus id counters. Mutations go through `&mut self`, so a
/// caller that shares a workspace serializes writers with its own lock.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "WorkspaceData", into = "WorkspaceData")]
pub struct Workspace {
    data: WorkspaceData,
    clock: Arc<dyn Clock>,
}

impl TryFrom<WorkspaceData> for Workspace {
    type Error = PileError;

    fn try_from(mut data: WorkspaceData) -> Result<Self, PileError> {
        let mut ids = BTreeSet::new();
        let mut evidence_ids = BTreeSet::new();
        for pile in &data.piles {
            if !ids.insert(pile.id.as_str()) {
                return Err(PileError::InvalidWorkspace(format!("duplicate pile id {:?}", pile.id)));
            }
            let mut members = BTreeSet::new();
            if let Some(d) = pile.doc_ids.iter().find(|d| !members.insert(d.as_str())) {
                return Err(PileError::InvalidWorkspace(format!(
                    "pile {:?} lists document {d:?} twice",
                    pile.id
                )));
            }
            for e in &pile.evidence {
                if !evidence_ids.insert(e.id.as_str()) {
                    return Err(PileError::InvalidWorkspace(format!("duplicate evidence id {:?}", e.id)));
                }
            }
        }
        let positions: BTreeSet<usize> = data.piles.iter().map(|p| p.position).collect();
        if positions.len() != data.piles.len() || positions.iter().any(|&p| p >= data.piles.len()) {
            return Err(PileError::InvalidWorkspace(
                "pile positions are not a permutation of 0..n".into(),
            ));
        }
        data.piles.sort_by_key(|p| p.position);
        Ok(Self {
            data,
            clock: Arc::new(SystemClock),
        })
    }
}

impl From<Workspace> for WorkspaceData {
    fn from(w: Workspace) -> Self {
        w.data
    }
}

impl Workspace {
    pub fn new(id: impl Into<String>) -> Self {
        Self::with_clock(id, Arc::new(SystemClock))
    }

    pub fn with_clock(id: impl Into<String>, clock: Arc<dyn Clock>) -> Self {
        let now = clock.now();
        Self {
            data: WorkspaceData {
                id: id.into(),
                created_at: now,
                updated_at: now,
                piles: Vec::new(),
                next_pile_id: 1,
                next_evidence_id: 1,
            },
            clock,
        }
    }

    pub fn set_clock(&mut self, clock: Arc<dyn Clock>) {
        self.clock = clock;
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        Arc::clone(&self.clock)
    }

    pub fn id(&self) -> &str {
        &self.data.id
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.data.created_at
    }

    pub fn updated_at(&self) -> DateTime<Utc> {
        self.data.updated_at
    }

    /// Piles in display order.
    pub fn piles(&self) -> &[Pile] {
        &self.data.piles
    }

    pub fn pile(&self, id: &str) -> Result<&Pile, PileError> {
        self.data
            .piles
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| PileError::UnknownPile(id.to_string()))
    }

    fn pile_index(&self, id: &str) -> Result<usize, PileError> {
        self.data
            .piles
            .iter()
            .position(|p| p.id == id)
            .ok_or_else(|| PileError::UnknownPile(id.to_string()))
    }

    fn touch(&mut self) {
        self.data.updated_at = self.clock.now();
    }

    fn renumber(&mut self) {
        for (i, p) in self.data.piles.iter_mut().enumerate() {
            p.position = i;
        }
    }

    fn check_name(name: &str) -> Result<String, PileError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(PileError::EmptyName);
        }
        Ok(name.to_string())
    }

    fn push_pile(&mut self, name: String, doc_ids: Vec<String>) -> &Pile {
        let id = format!("p{}", self.data.next_pile_id);
        self.data.next_pile_id += 1;
        let position = self.data.piles.len();
        self.data.piles.push(Pile {
            id,
            name,
            position,
            doc_ids,
            evidence: Vec::new(),
        });
        self.touch();
        self.data.piles.last().expect("just pushed")
    }

    /// New empty pile at the end of the ordering.
    pub fn create_pile(&mut self, name: &str) -> Result<&Pile, PileError> {
        let name = Self::check_name(name)?;
        Ok(self.push_pile(name, Vec::new()))
    }

    pub fn rename_pile(&mut self, id: &str, name: &str) -> Result<&Pile, PileError> {
        let name = Self::check_name(name)?;
        let i = self.pile_index(id)?;
        self.data.piles[i].name = name;
        self.touch();
        Ok(&self.data.piles[i])
    }

    /// Copy of a pile's name and membership, without its evidence.
    pub fn duplicate_pile(&mut self, id: &str) -> Result<&Pile, PileError> {
        let source = self.pile(id)?;
        let name = format!("{} (copy)", source.name);
        let docs = source.doc_ids.clone();
        Ok(self.push_pile(name, docs))
    }

    pub fn add_docs(&mut self, id: &str, doc_ids: &[String], corpus: &CorpusIndex) -> Result<&Pile, PileError> {
        let i = self.pile_index(id)?;
        if let Some(bad) = doc_ids.iter().find(|d| !corpus.contains(d)) {
            return Err(PileError::UnknownDocument(bad.clone()));
        }
        self.data.piles[i].push_new(doc_ids.iter().cloned());
        self.touch();
        Ok(&self.data.piles[i])
    }

    /// Remove the given ids; ids in the corpus but not in the pile are ignored.
    pub fn remove_docs(&mut self, id: &str, doc_ids: &[String], corpus: &CorpusIndex) -> Result<&Pile, PileError> {
        let i = self.pile_index(id)?;
        if let Some(bad) = doc_ids.iter().find(|d| !corpus.contains(d)) {
            return Err(PileError::UnknownDocument(bad.clone()));
        }
        let drop: BTreeSet<&str> = doc_ids.iter().map(String::as_str).collect();
        self.data.piles[i].doc_ids.retain(|d| !drop.contains(d.as_str()));
        self.touch();
        Ok(&self.data.piles[i])
    }

    /// Reorder piles; `ordering` must be a permutation of the pile ids.
    pub fn reorder_piles(&mut self, ordering: &[String]) -> Result<(), PileError> {
        if ordering.len() != self.data.piles.len() {
            return Err(PileError::InvalidOrdering(format!(
                "expected {} pile ids, got {}",
                self.data.piles.len(),
                ordering.len()
            )));
        }
        let mut seen = BTreeSet::new();
        let mut indices = Vec::with_capacity(ordering.len());
        for id in ordering {
            if !seen.insert(id.as_str()) {
                return Err(PileError::InvalidOrdering(format!("{id:?} listed twice")));
            }
            indices.push(self.pile_index(id)?);
        }
        let mut old: Vec<Option<Pile>> = std::mem::take(&mut self.data.piles).into_iter().map(Some).collect();
        self.data.piles = indices
            .into_iter()
            .map(|i| old[i].take().expect("indices are distinct"))
            .collect();
        self.renumber();
        self.touch();
        Ok(())
    }

    /// Move one pile to `position`, shifting the others.
    pub fn move_pile(&mut self, id: &str, position: usize) -> Result<&Pile, PileError> {
        let from = self.pile_index(id)?;
        if position >= self.data.piles.len() {
            return Err(PileError::InvalidOrdering(format!(
                "position {position} out of range for {} piles",
                self.data.piles.len()
            )));
        }
        let pile = self.data.piles.remove(from);
        self.data.piles.insert(position, pile);
        self.renumber();
        self.touch();
        Ok(&self.data.piles[position])
    }

    pub fn evidence(&self, pile_id: &str, evidence_id: &str) -> Result<&EvidenceRecord, PileError> {
        self.pile(pile_id)?.evidence(evidence_id)
    }

    /// Prompt a task would send, without calling a provider.
    pub fn prepare_task(
        &self,
        pile_id: &str,
        kind: TaskKind,
        params: &TaskParams,
        corpus: &CorpusIndex,
        templates: &TaskTemplates,
    ) -> Result<PreparedTask, PileError> {
        let pile = self.pile(pile_id)?;
        let docs = resolve_docs(corpus, &pile.doc_ids)?;
        let prompt = assemble_prompt(&docs, kind, params, templates)?;
        Ok(PreparedTask {
            pile_id: pile.id.clone(),
            kind,
            params: params.clone(),
            doc_ids: pile.doc_ids.clone(),
            prompt,
        })
    }

    /// Append the record for a completed task to its pile.
    pub fn commit_task(&mut self, task: PreparedTask, result: GenerationResult) -> Result<&EvidenceRecord, PileError> {
        let i = self.pile_index(&task.pile_id)?;
        let id = format!("e{}", self.data.next_evidence_id);
        self.data.next_evidence_id += 1;
        let record = EvidenceRecord {
            id,
            task_kind: task.kind,
            params: task.params,
            doc_ids: task.doc_ids,
            prompt: task.prompt.text,
            response: result.text,
            model: result.model,
            request_digest: result.request_digest,
            created_at: self.clock.now(),
            empty_pile_warning: task.prompt.empty_pile,
            annotations: Annotations::default(),
        };
        self.data.piles[i].evidence.push(record);
        self.touch();
        Ok(self.data.piles[i].evidence.last().expect("just pushed"))
    }

    /// Assemble, generate and append in one step. A provider failure leaves
    /// the workspace untouched.
    pub fn run_task(
        &mut self,
        pile_id: &str,
        kind: TaskKind,
        params: &TaskParams,
        corpus: &CorpusIndex,
        templates: &TaskTemplates,
        llm: &dyn Generator,
    ) -> Result<&EvidenceRecord, PileError> {
        let task = self.prepare_task(pile_id, kind, params, corpus, templates)?;
        let result = task.execute(llm)?;
        self.commit_task(task, result)
    }

    pub fn set_entities(
        &mut self,
        pile_id: &str,
        evidence_id: &str,
        spans: Vec<EntitySpan>,
    ) -> Result<&EvidenceRecord, PileError> {
        self.annotate(pile_id, evidence_id, |a| a.entities = Some(spans))
    }

    pub fn set_links(
        &mut self,
        pile_id: &str,
        evidence_id: &str,
        links: Vec<SentenceLink>,
    ) -> Result<&EvidenceRecord, PileError> {
        self.annotate(pile_id, evidence_id, |a| a.links = Some(links))
    }

    /// Record suggestions and add the ones not already in the pile. Membership
    /// flags are recomputed against the pile as it is now.
    pub fn apply_suggestions(
        &mut self,
        pile_id: &str,
        evidence_id: &str,
        mut suggestions: Vec<Suggestion>,
    ) -> Result<&EvidenceRecord, PileError> {
        let i = self.pile_index(pile_id)?;
        self.data.piles[i].evidence(evidence_id)?;
        let pile = &mut self.data.piles[i];
        for s in &mut suggestions {
            s.already_in_pile = pile.contains(&s.doc_id);
            s.added = !s.already_in_pile;
        }
        pile.push_new(suggestions.iter().filter(|s| s.added).map(|s| s.doc_id.clone()));
        self.annotate(pile_id, evidence_id, |a| a.suggestions = Some(suggestions))
    }

    fn annotate(
        &mut self,
        pile_id: &str,
        evidence_id: &str,
        f: impl FnOnce(&mut Annotations),
    ) -> Result<&EvidenceRecord, PileError> {
        let i = self.pile_index(pile_id)?;
        f(&mut self.data.piles[i].evidence_mut(evidence_id)?.annotations);
        self.touch();
        self.data.piles[i].evidence(evidence_id)
    }

    /// Check every referenced document exists in `corpus`.
    pub fn check_documents(&self, corpus: &CorpusIndex) -> Result<(), PileError> {
        let missing = self
            .data
            .piles
            .iter()
            .flat_map(|p| p.doc_ids.iter().chain(p.evidence.iter().flat_map(|e| &e.doc_ids)))
            .find(|d| !corpus.contains(d));
        match missing {
            Some(d) => Err(PileError::UnknownDocument(d.clone())),
            None => Ok(()),
        }
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("workspace serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PileError> {
        serde_json::from_str(text).map_err(|e| PileError::InvalidWorkspace(e.to_string()))
    }

    /// Write to `path` via a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<(), PileError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PileError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
