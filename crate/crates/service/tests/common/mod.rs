#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use contract_qa_core::cms::seed::{self, AmendmentRecord, ManagerRecord};
use contract_qa_core::cms::ContractRecord;
use contract_qa_core::config::AppConfig;
use contract_qa_core::llm::ChatProvider;
use contract_qa_service::api;
use contract_qa_service::app::AppState;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const SUPPLIER_QUESTION: &str = "Who is the supplier of contract 400/2021?";

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn manifest() -> PathBuf {
    fixtures_dir().join("manifest.jsonl")
}

/// Configuration with every path under `dir` and no token variable.
pub fn config_in(dir: &Path) -> AppConfig {
    let mut cfg = AppConfig::default();
    cfg.paths.database = dir.join("cms.db");
    cfg.paths.index_dir = dir.join("index");
    cfg.paths.sessions_dir = Some(dir.join("sessions"));
    cfg.paths.sql_audit_log = Some(dir.join("audit.jsonl"));
    cfg.server.token_env = "CONTRACT_QA_TEST_TOKEN_NEVER_SET".into();
    cfg
}

pub fn seed_db(path: &Path) {
    let f = fixtures_dir();
    let contracts: Vec<ContractRecord> = seed::read_csv(&f.join("contracts.csv")).unwrap();
    let managers: Vec<ManagerRecord> = seed::read_csv(&f.join("managers.csv")).unwrap();
    let amendments: Vec<AmendmentRecord> = seed::read_csv(&f.join("amendments.csv")).unwrap();
    seed::seed(path, &contracts, &managers, &amendments).unwrap();
}

pub struct TestApp {
    pub dir: tempfile::TempDir,
    pub state: Arc<AppState>,
    pub router: Router,
}

/// Seeded database and an index holding the whole fixture corpus.
pub async fn app() -> TestApp {
    app_with(|_| {}, None).await
}

pub async fn app_with(tweak: impl FnOnce(&mut AppConfig), llm: Option<Arc<dyn ChatProvider>>) -> TestApp {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config_in(dir.path());
    tweak(&mut cfg);
    seed_db(&cfg.paths.database);
    let state = build(cfg, llm);
    state.ingest(&manifest()).await.unwrap();
    let router = api::router(state.clone(), None);
    TestApp { dir, state, router }
}

pub fn build(cfg: AppConfig, llm: Option<Arc<dyn ChatProvider>>) -> Arc<AppState> {
    Arc::new(match llm {
        Some(llm) => AppState::with_llm(cfg, llm).unwrap(),
        None => AppState::from_config(cfg).unwrap(),
    })
}

pub async fn call(router: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_with(router, method, uri, body, None).await
}

pub async fn call_with(
    router: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
    token: Option<&str>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub async fn new_session(router: &Router, role: &str) -> String {
    let (status, body) = call(
        router,
        Method::POST,
        "/sessions",
        Some(serde_json::json!({ "role": role })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_owned()
}

/// Type skeleton of a JSON value: keys kept, leaves replaced by type names,
/// arrays reduced to their first element.
pub fn shape(v: &Value) -> Value {
    match v {
        Value::Null => "null".into(),
        Value::Bool(_) => "boolean".into(),
        Value::Number(_) => "number".into(),
        Value::String(_) => "string".into(),
        Value::Array(items) => Value::Array(items.first().map(shape).into_iter().collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), shape(v))).collect()),
    }
}

/// Compares the shape of `v` with `tests/golden/<name>.json`.
/// `UPDATE_GOLDEN=1` rewrites the file.
pub fn assert_golden(name: &str, v: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.json"));
    let actual = shape(v);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&actual).unwrap() + "\n").unwrap();
        return;
    }
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let expected: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(actual, expected, "shape of {name} changed");
}
