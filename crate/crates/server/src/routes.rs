use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use pilework_core::corpus::{group_sort, keyword_filter, GroupKey, SearchFields, SortDirection};
use pilework_core::kg_query::{
    entity_context, rank_facts, ranking_context, resolve_sources, search_entity, RankedFact, DEFAULT_ENTITY_CAP,
    DEFAULT_FACT_LIMIT,
};
use pilework_core::piles::{TaskKind, TaskParams, Workspace, DEFAULT_TEMPERATURE};
use pilework_core::providers::TEMPERATURE_RANGE;
use pilework_core::search::{SearchResult, DEFAULT_SEARCH_K};
use pilework_core::validate::{extract_entities, link_sentences, rank_suggestions, DEFAULT_SUGGEST_K};
use pilework_core::{CorpusIndex, Document, Pile};

use crate::{ApiError, AppState, Envelope, Shared};

type ApiResult = Result<Response, ApiError>;

fn ok<T: Serialize>(data: T) -> ApiResult {
    Ok(Json(Envelope::new(data)).into_response())
}

fn created<T: Serialize>(data: T) -> ApiResult {
    Ok((StatusCode::CREATED, Json(Envelope::new(data))).into_response())
}

/// JSON body extractor whose rejections use the error envelope.
pub(crate) struct Body<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Body(v))
            .map_err(|e: JsonRejection| ApiError::bad_request(e.body_text()))
    }
}

/// Query-string extractor whose rejections use the error envelope.
pub(crate) struct Params<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        axum::extract::Query::<T>::from_request_parts(parts, state)
            .await
            .map(|q| Params(q.0))
            .map_err(|e: QueryRejection| ApiError::bad_request(e.body_text()))
    }
}

pub(crate) fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/documents", get(documents))
        .route("/api/documents/{id}", get(document))
        .route("/api/search/semantic", post(semantic_search))
        .route("/api/kg/entities/{name}/facts", get(entity_facts))
        .route("/api/kg/entities/{name}/context", get(context))
        .route("/api/kg/facts/{id}/sources", get(fact_sources))
        .route("/api/piles", post(create_pile))
        .route("/api/piles/{id}", patch(update_pile))
        .route("/api/piles/{id}/docs", post(add_docs).delete(remove_docs))
        .route("/api/piles/{id}/tasks", post(run_task))
        .route("/api/piles/{id}/evidence/{eid}/extract", post(extract))
        .route("/api/piles/{id}/evidence/{eid}/link", post(link))
        .route("/api/piles/{id}/evidence/{eid}/suggest", post(suggest))
        .route("/api/workspace", get(get_workspace).put(put_workspace))
        .with_state(state)
}

impl AppState {
    /// Run provider-bound work on the blocking pool under the configured
    /// timeout.
    async fn blocking<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&Shared) -> Result<T, ApiError> + Send + 'static,
    {
        let shared = Arc::clone(&self.inner);
        let handle = tokio::task::spawn_blocking(move || f(&shared));
        match tokio::time::timeout(self.inner.config.provider_timeout, handle).await {
            Err(_) => Err(ApiError::timeout()),
            Ok(Err(join)) => Err(ApiError::internal(join.to_string())),
            Ok(Ok(result)) => result,
        }
    }

    /// Apply a mutation under the write lock and persist the result before
    /// releasing it.
    fn mutate<T>(&self, f: impl FnOnce(&mut Workspace) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut ws = self.inner.workspace.write();
        let out = f(&mut ws)?;
        if let Some(path) = &self.inner.config.workspace_file {
            ws.save(path)?;
        }
        Ok(out)
    }

    fn read<T>(&self, f: impl FnOnce(&Workspace) -> Result<T, ApiError>) -> Result<T, ApiError> {
        f(&self.inner.workspace.read())
    }
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct Meta {
    task_kinds: Vec<TaskKind>,
    temperature_range: (f64, f64),
    default_temperature: f64,
    documents: usize,
    facts: usize,
}

async fn meta(State(s): State<AppState>) -> ApiResult {
    ok(Meta {
        task_kinds: TaskKind::ALL.to_vec(),
        temperature_range: TEMPERATURE_RANGE,
        default_temperature: DEFAULT_TEMPERATURE,
        documents: s.corpus().len(),
        facts: s.facts().len(),
    })
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DocumentQuery {
    /// Keyword filter; blank lists the whole corpus.
    pub filter: Option<String>,
    /// `all`, `title` or `body`.
    pub fields: Option<String>,
    pub group_by: Option<String>,
    pub sort_by: Option<String>,
    pub direction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GroupIds {
    pub label: String,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DocumentListing<'a> {
    pub documents: Vec<&'a Document>,
    /// Present when `groupBy` was given.
    pub groups: Vec<GroupIds>,
}

fn parse_fields(s: &str) -> Result<SearchFields, ApiError> {
    match s.to_ascii_lowercase().as_str() {
        "all" | "" => Ok(SearchFields::ALL),
        "title" => Ok(SearchFields::TITLE),
        "body" | "text" => Ok(SearchFields::BODY),
        other => Err(ApiError::bad_request(format!("unknown fields value {other:?}"))),
    }
}

/// Keyword filter, then optional sort, then optional grouping. Sorting
/// happens first and grouping is stable, so `sortBy` orders documents within
/// each `groupBy` group.
pub fn list_documents<'a>(corpus: &'a CorpusIndex, q: &DocumentQuery) -> Result<DocumentListing<'a>, ApiError> {
    let fields = q.fields.as_deref().map(parse_fields).transpose()?.unwrap_or_default();
    let mut docs: Vec<&Document> = match q.filter.as_deref().filter(|f| !f.trim().is_empty()) {
        Some(f) => keyword_filter(corpus, f, fields)?,
        None => corpus.documents().iter().collect(),
    };
    let direction: SortDirection = q
        .direction
        .as_deref()
        .map(str::parse)
        .transpose()
        .map_err(ApiError::bad_request)?
        .unwrap_or_default();
    let key = |s: &Option<String>| -> Result<Option<GroupKey>, ApiError> {
        s.as_deref().map(str::parse).transpose().map_err(ApiError::bad_request)
    };
    let (sort_by, group_by) = (key(&q.sort_by)?, key(&q.group_by)?);
    if let Some(k) = sort_by {
        docs = group_sort(&docs, k, direction)
            .into_iter()
            .flat_map(|g| g.documents)
            .collect();
    }
    let mut groups = Vec::new();
    if let Some(k) = group_by {
        let group_direction = if sort_by.is_some() {
            SortDirection::Asc
        } else {
            direction
        };
        let grouped = group_sort(&docs, k, group_direction);
        docs = grouped.iter().flat_map(|g| g.documents.iter().copied()).collect();
        groups = grouped
            .into_iter()
            .map(|g| GroupIds {
                label: g.label,
                doc_ids: g.documents.iter().map(|d| d.id.clone()).collect(),
            })
            .collect();
    }
    Ok(DocumentListing {
        documents: docs,
        groups,
    })
}

async fn documents(State(s): State<AppState>, Params(q): Params<DocumentQuery>) -> ApiResult {
    ok(list_documents(s.corpus(), &q)?)
}

async fn document(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    ok(s.corpus().require(&id)?)
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SemanticQuery {
    query: String,
    k: Option<usize>,
    candidate_ids: Option<Vec<String>>,
}

async fn semantic_search(State(s): State<AppState>, Body(q): Body<SemanticQuery>) -> ApiResult {
    let results: Vec<SearchResult> = s
        .blocking(move |sh| {
            Ok(sh.embeddings.semantic_search(
                &sh.embedder,
                &q.query,
                q.k.unwrap_or(DEFAULT_SEARCH_K),
                q.candidate_ids.as_deref(),
            )?)
        })
        .await?;
    ok(results)
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct FactsQuery {
    /// Text to rank against.
    context: Option<String>,
    /// Rank against this pile's latest response or contents instead.
    pile_id: Option<String>,
    k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EntityFacts {
    pub entity: String,
    /// Facts mentioning the entity, before the cap.
    pub total: usize,
    pub facts: Vec<RankedFact>,
}

async fn entity_facts(State(s): State<AppState>, Path(name): Path<String>, Params(q): Params<FactsQuery>) -> ApiResult {
    let context = match (q.context, q.pile_id) {
        (Some(c), _) => c,
        (None, Some(pile)) => s.read(|ws| Ok(ranking_context(ws.pile(&pile)?, s.corpus())))?,
        (None, None) => String::new(),
    };
    let k = q.k.unwrap_or(DEFAULT_FACT_LIMIT);
    let result = s
        .blocking(move |sh| {
            let matches = search_entity(&sh.facts, &name);
            let facts = rank_facts(&matches, &context, &sh.embedder, k)?;
            Ok(EntityFacts {
                entity: pilework_core::text::normalize_entity(&name),
                total: matches.len(),
                facts,
            })
        })
        .await?;
    ok(result)
}

#[derive(Debug, Deserialize)]
struct ContextQuery {
    connected: Option<usize>,
    similar: Option<usize>,
}

async fn context(State(s): State<AppState>, Path(name): Path<String>, Params(q): Params<ContextQuery>) -> ApiResult {
    let result = s
        .blocking(move |sh| {
            Ok(entity_context(
                &sh.facts,
                &name,
                &sh.embedder,
                q.connected.unwrap_or(DEFAULT_ENTITY_CAP),
                q.similar.unwrap_or(DEFAULT_ENTITY_CAP),
            )?)
        })
        .await?;
    ok(result)
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct FactSources<'a> {
    fact_id: String,
    sources: Vec<&'a Document>,
}

async fn fact_sources(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let sources = resolve_sources(s.facts(), s.corpus(), &id)?;
    ok(FactSources { fact_id: id, sources })
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct NewPile {
    name: Option<String>,
    duplicate_of: Option<String>,
}

async fn create_pile(State(s): State<AppState>, Body(body): Body<NewPile>) -> ApiResult {
    let pile = s.mutate(|ws| {
        Ok(match (body.duplicate_of, body.name) {
            (Some(src), _) => ws.duplicate_pile(&src)?.clone(),
            (None, Some(name)) => ws.create_pile(&name)?.clone(),
            (None, None) => return Err(ApiError::bad_request("name or duplicateOf is required")),
        })
    })?;
    created(pile)
}

#[derive(Debug, Deserialize)]
struct PileUpdate {
    name: Option<String>,
    position: Option<usize>,
}

async fn update_pile(State(s): State<AppState>, Path(id): Path<String>, Body(body): Body<PileUpdate>) -> ApiResult {
    let pile = s.mutate(|ws| {
        // validate both before applying either
        ws.pile(&id)?;
        if let Some(p) = body.position.filter(|&p| p >= ws.piles().len()) {
            return Err(ApiError::bad_request(format!("position {p} out of range")));
        }
        if let Some(name) = &body.name {
            ws.rename_pile(&id, name)?;
        }
        if let Some(p) = body.position {
            ws.move_pile(&id, p)?;
        }
        Ok(ws.pile(&id)?.clone())
    })?;
    ok(pile)
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct DocIds {
    doc_ids: Vec<String>,
}

async fn add_docs(State(s): State<AppState>, Path(id): Path<String>, Body(body): Body<DocIds>) -> ApiResult {
    let pile = s.mutate(|ws| Ok(ws.add_docs(&id, &body.doc_ids, s.corpus())?.clone()))?;
    ok(pile)
}

async fn remove_docs(State(s): State<AppState>, Path(id): Path<String>, Body(body): Body<DocIds>) -> ApiResult {
    let pile = s.mutate(|ws| Ok(ws.remove_docs(&id, &body.doc_ids, s.corpus())?.clone()))?;
    ok(pile)
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct TaskRequest {
    kind: TaskKind,
    #[serde(default)]
    params: TaskParams,
    /// Return the assembled prompt without calling the provider.
    #[serde(default)]
    preview: bool,
}

async fn run_task(State(s): State<AppState>, Path(id): Path<String>, Body(body): Body<TaskRequest>) -> ApiResult {
    let task = s.read(|ws| Ok(ws.prepare_task(&id, body.kind, &body.params, s.corpus(), s.templates())?))?;
    if body.preview {
        return ok(task.prompt);
    }
    let call = task.clone();
    let result = s.blocking(move |sh| Ok(call.execute(sh.llm.as_ref())?)).await?;
    let record = s.mutate(|ws| Ok(ws.commit_task(task, result)?.clone()))?;
    created(record)
}

fn evidence_inputs(s: &AppState, pile: &str, eid: &str) -> Result<(Pile, String), ApiError> {
    s.read(|ws| {
        let pile = ws.pile(pile)?;
        let response = pile.evidence(eid)?.response.clone();
        Ok((pile.clone(), response))
    })
}

async fn extract(State(s): State<AppState>, Path((id, eid)): Path<(String, String)>) -> ApiResult {
    let (_, response) = evidence_inputs(&s, &id, &eid)?;
    let spans = extract_entities(&response, s.facts());
    s.mutate(|ws| Ok(ws.set_entities(&id, &eid, spans.clone()).map(|_| ())?))?;
    ok(spans)
}

#[derive(Debug, Deserialize)]
struct LinkQuery {
    floor: Option<f64>,
}

async fn link(
    State(s): State<AppState>,
    Path((id, eid)): Path<(String, String)>,
    Params(q): Params<LinkQuery>,
) -> ApiResult {
    let (pile, response) = evidence_inputs(&s, &id, &eid)?;
    let floor = q.floor.unwrap_or(s.config().link_floor);
    let links = s
        .blocking(move |sh| Ok(link_sentences(&response, &pile, &sh.corpus, &sh.embedder, floor)?))
        .await?;
    s.mutate(|ws| Ok(ws.set_links(&id, &eid, links.clone()).map(|_| ())?))?;
    ok(links)
}

#[derive(Debug, Deserialize)]
struct SuggestQuery {
    k: Option<usize>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct SuggestOutcome {
    suggestions: Vec<pilework_core::validate::Suggestion>,
    pile: Pile,
}

async fn suggest(
    State(s): State<AppState>,
    Path((id, eid)): Path<(String, String)>,
    Params(q): Params<SuggestQuery>,
) -> ApiResult {
    let (pile, response) = evidence_inputs(&s, &id, &eid)?;
    let k = q.k.unwrap_or(DEFAULT_SUGGEST_K);
    let ranked = s
        .blocking(move |sh| Ok(rank_suggestions(&response, &pile, &sh.embeddings, &sh.embedder, k)?))
        .await?;
    let outcome = s.mutate(|ws| {
        let record = ws.apply_suggestions(&id, &eid, ranked)?;
        let suggestions = record.annotations.suggestions.clone().unwrap_or_default();
        Ok(SuggestOutcome {
            suggestions,
            pile: ws.pile(&id)?.clone(),
        })
    })?;
    ok(outcome)
}

async fn get_workspace(State(s): State<AppState>) -> ApiResult {
    s.read(|ws| ok(ws))
}

async fn put_workspace(State(s): State<AppState>, Body(incoming): Body<Workspace>) -> ApiResult {
    incoming.check_documents(s.corpus())?;
    let ws = s.mutate(|ws| {
        let clock = ws.clock();
        *ws = incoming;
        ws.set_clock(clock);
        Ok(ws.clone())
    })?;
    ok(ws)
}
