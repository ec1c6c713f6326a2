use std::fs;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use pilework_core::corpus::{keyword_filter, CorpusIndex, Document, SearchFields};
use pilework_core::kg_build::{Fact, FactStore};
use pilework_core::kg_query::{entity_context, rank_facts, resolve_sources, search_entity};
use pilework_core::piles::{TaskTemplates, Workspace};
use pilework_core::providers::{EmbeddingService, Providers, ReplayGenerator, ReplayRecord};
use pilework_core::search::build_doc_embeddings;
use pilework_core::validate::{extract_entities, link_sentences, DEFAULT_LINK_FLOOR};
use pilework_server::{list_documents, AppState, Artifacts, DocumentQuery, ServerConfig};

const RESPONSE: &str = "Edvard Vann leads the kidnapping investigation. Protesters from the POK gathered in Abila.";

fn corpus() -> CorpusIndex {
    let docs = vec![
        Document::new(
            "d1",
            "Kronos kidnapping",
            "Edvard Vann leads the kidnapping investigation. GAStech staff are missing.",
        ),
        Document::new(
            "d2",
            "Abila protest",
            "Protesters from the POK gathered in Abila. The crowd was calm.",
        ),
        Document::new("d3", "Weather", "Rain fell across Tethys. Kronos ports closed early."),
        Document::new("d4", "Markets", "Shares of GAStech fell on Monday."),
        Document::new("d5", "Sports", "The Abila football club won again."),
        Document::new(
            "d6",
            "Police",
            "Police in Kronos asked for information about the missing staff.",
        ),
    ];
    CorpusIndex::from_documents(docs).unwrap()
}

fn facts() -> FactStore {
    let f = |s: &str, p: &str, o: &str, src: &[&str]| Fact::new(s, p, o, src.iter().map(|x| x.to_string()).collect());
    FactStore::from_facts([
        f("edvard vann", "leads", "kidnapping investigation", &["d1"]),
        f("pok", "gathered in", "abila", &["d2"]),
        f("gastech", "staff missing in", "kronos", &["d1", "d6"]),
        f("gastech", "shares fell on", "monday", &["d4"]),
        f("abila football club", "won", "match", &["d5"]),
    ])
    .unwrap()
}

fn state(workspace_file: Option<std::path::PathBuf>) -> AppState {
    let corpus = corpus();
    let embedder = EmbeddingService::mock();
    let embeddings = build_doc_embeddings(&corpus, &embedder).unwrap();
    let generator = Arc::new(ReplayGenerator::new([ReplayRecord {
        digest: None,
        response: RESPONSE.into(),
    }]));
    AppState::new(
        Artifacts {
            corpus,
            embeddings,
            facts: facts(),
        },
        Providers {
            embedding: embedder,
            generator,
        },
        TaskTemplates::default(),
        Workspace::new("contract"),
        ServerConfig {
            workspace_file,
            ..Default::default()
        },
    )
    .unwrap()
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(value["schemaVersion"], 1, "{uri}: {value}");
    (status, value)
}

fn as_json<T: serde::Serialize>(v: T) -> Value {
    serde_json::to_value(v).unwrap()
}

#[tokio::test]
async fn document_listing_matches_library() {
    let s = state(None);
    let app = s.router();
    let (status, body) = call(&app, Method::GET, "/api/documents?filter=kronos", None).await;
    assert_eq!(status, StatusCode::OK);
    let expected = keyword_filter(s.corpus(), "kronos", SearchFields::ALL).unwrap();
    assert_eq!(body["data"]["documents"], as_json(&expected));
    assert_eq!(body["data"]["documents"].as_array().unwrap().len(), 3);

    let (_, body) = call(&app, Method::GET, "/api/documents?sortBy=length&direction=desc", None).await;
    let q = DocumentQuery {
        sort_by: Some("length".into()),
        direction: Some("desc".into()),
        ..Default::default()
    };
    assert_eq!(body["data"], as_json(list_documents(s.corpus(), &q).unwrap()));

    let (_, body) = call(&app, Method::GET, "/api/documents/d3", None).await;
    assert_eq!(body["data"], as_json(s.corpus().get("d3").unwrap()));
    let (status, body) = call(&app, Method::GET, "/api/documents/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");
    let (status, _) = call(&app, Method::GET, "/api/documents?groupBy=colour", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn kg_endpoints_match_library() {
    let s = state(None);
    let app = s.router();
    let (_, body) = call(
        &app,
        Method::GET,
        "/api/kg/entities/GAStech/facts?context=missing%20staff",
        None,
    )
    .await;
    let matches = search_entity(s.facts(), "GAStech");
    let ranked = rank_facts(&matches, "missing staff", s.embedder(), 5).unwrap();
    assert_eq!(body["data"]["facts"], as_json(&ranked));
    assert_eq!(body["data"]["total"], 2);

    let (_, body) = call(&app, Method::GET, "/api/kg/entities/abila/context", None).await;
    assert_eq!(
        body["data"],
        as_json(entity_context(s.facts(), "abila", s.embedder(), 5, 5).unwrap())
    );

    let id = &matches[0].id;
    let (_, body) = call(&app, Method::GET, &format!("/api/kg/facts/{id}/sources"), None).await;
    assert_eq!(
        body["data"]["sources"],
        as_json(resolve_sources(s.facts(), s.corpus(), id).unwrap())
    );
    let (status, _) = call(&app, Method::GET, "/api/kg/facts/zzz/sources", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn scripted_session_matches_library_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("workspace.json");
    let s = state(Some(file.clone()));
    let app = s.router();

    let (_, body) = call(
        &app,
        Method::POST,
        "/api/search/semantic",
        Some(json!({"query": "missing GAStech staff", "k": 3})),
    )
    .await;
    let expected = s
        .embeddings()
        .semantic_search(s.embedder(), "missing GAStech staff", 3, None)
        .unwrap();
    assert_eq!(body["data"], as_json(&expected));
    let (status, _) = call(&app, Method::POST, "/api/search/semantic", Some(json!({"query": " "}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = call(&app, Method::POST, "/api/piles", Some(json!({"name": "Vann"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    let pile = body["data"]["id"].as_str().unwrap().to_string();
    let (_, body) = call(
        &app,
        Method::POST,
        &format!("/api/piles/{pile}/docs"),
        Some(json!({"docIds": ["d1", "d2", "d1"]})),
    )
    .await;
    assert_eq!(body["data"]["docIds"], json!(["d1", "d2"]));
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/api/piles/{pile}/docs"),
        Some(json!({"docIds": ["d9"]})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let task = json!({"kind": "Summarize", "params": {"temperature": 0.2}});
    let mut preview = task.clone();
    preview["preview"] = json!(true);
    let (_, body) = call(&app, Method::POST, &format!("/api/piles/{pile}/tasks"), Some(preview)).await;
    let prompt = body["data"]["text"].as_str().unwrap().to_string();
    assert!(prompt.ends_with("Summarize the main events described."));
    assert!(s.workspace().pile(&pile).unwrap().evidence.is_empty());

    let (status, body) = call(&app, Method::POST, &format!("/api/piles/{pile}/tasks"), Some(task)).await;
    assert_eq!(status, StatusCode::CREATED);
    let record = s.workspace().pile(&pile).unwrap().evidence[0].clone();
    assert_eq!(body["data"], as_json(&record));
    assert_eq!(record.prompt, prompt);
    assert_eq!(record.response, RESPONSE);
    let (status, body) = call(
        &app,
        Method::POST,
        &format!("/api/piles/{pile}/tasks"),
        Some(json!({"kind": "Answer"})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    let eid = record.id.clone();

    let (_, body) = call(
        &app,
        Method::POST,
        &format!("/api/piles/{pile}/evidence/{eid}/extract"),
        None,
    )
    .await;
    assert_eq!(body["data"], as_json(extract_entities(RESPONSE, s.facts())));
    assert_eq!(body["data"].as_array().unwrap().len(), 4);

    let (_, body) = call(
        &app,
        Method::POST,
        &format!("/api/piles/{pile}/evidence/{eid}/link"),
        None,
    )
    .await;
    let pile_now = s.workspace().pile(&pile).unwrap().clone();
    let links = link_sentences(RESPONSE, &pile_now, s.corpus(), s.embedder(), DEFAULT_LINK_FLOOR).unwrap();
    assert_eq!(body["data"], as_json(&links));
    assert_eq!(links.len(), 2);

    let ranked = s.embeddings().semantic_search(s.embedder(), RESPONSE, 5, None).unwrap();
    let (_, body) = call(
        &app,
        Method::POST,
        &format!("/api/piles/{pile}/evidence/{eid}/suggest"),
        None,
    )
    .await;
    let suggestions = body["data"]["suggestions"].as_array().unwrap();
    assert_eq!(suggestions.len(), 5);
    for (got, want) in suggestions.iter().zip(&ranked) {
        assert_eq!(got["docId"], want.doc_id.as_str());
        assert_eq!(got["score"].as_f64().unwrap(), want.score);
        let member = ["d1", "d2"].contains(&want.doc_id.as_str());
        assert_eq!(got["alreadyInPile"], member);
        assert_eq!(got["added"], !member);
    }
    assert_eq!(body["data"]["pile"]["docIds"].as_array().unwrap().len(), 5);

    let (_, body) = call(&app, Method::POST, "/api/piles", Some(json!({"duplicateOf": pile}))).await;
    assert_eq!(body["data"]["name"], "Vann (copy)");
    assert_eq!(body["data"]["evidence"], json!([]));
    let copy = body["data"]["id"].as_str().unwrap().to_string();
    let (_, body) = call(
        &app,
        Method::PATCH,
        &format!("/api/piles/{copy}"),
        Some(json!({"name": "Second", "position": 0})),
    )
    .await;
    assert_eq!(body["data"]["position"], 0);
    let (_, body) = call(
        &app,
        Method::DELETE,
        &format!("/api/piles/{copy}/docs"),
        Some(json!({"docIds": ["d1"]})),
    )
    .await;
    assert!(!body["data"]["docIds"].as_array().unwrap().contains(&json!("d1")));

    // persisted file equals the served workspace and reloads byte-identically
    let saved = fs::read_to_string(&file).unwrap();
    assert_eq!(saved, s.workspace().to_json());
    let (_, body) = call(&app, Method::GET, "/api/workspace", None).await;
    assert_eq!(body["data"], serde_json::from_str::<Value>(&saved).unwrap());
    assert_eq!(Workspace::from_json(&saved).unwrap().to_json(), saved);

    let (status, _) = call(&app, Method::PUT, "/api/workspace", Some(body["data"].clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fs::read_to_string(&file).unwrap(), saved);

    let mut bad = body["data"].clone();
    bad["piles"][0]["docIds"] = json!(["ghost"]);
    let (status, _) = call(&app, Method::PUT, "/api/workspace", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(fs::read_to_string(&file).unwrap(), saved);
}

#[tokio::test]
async fn unknown_piles_and_malformed_bodies() {
    let app = state(None).router();
    let (status, body) = call(
        &app,
        Method::POST,
        "/api/piles/p7/docs",
        Some(json!({"docIds": ["d1"]})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"]["message"].as_str().unwrap().contains("p7"));
    let (status, _) = call(&app, Method::POST, "/api/piles", Some(json!({"title": 3}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::POST, "/api/piles/p1/evidence/e1/extract", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (_, body) = call(&app, Method::GET, "/api/meta", None).await;
    assert_eq!(body["data"]["taskKinds"].as_array().unwrap().len(), 9);
    assert_eq!(body["data"]["temperatureRange"], json!([0.0, 2.0]));
}
