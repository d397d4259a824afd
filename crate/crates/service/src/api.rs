//! HTTP API. Every non-2xx response body is an [`ApiError`].

use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, PathRejection};
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use contract_qa_core::index::EmbedError;
use contract_qa_core::ingest::{IngestReport, PipelineError};
use contract_qa_core::ocs;
use contract_qa_core::orchestrator::{AgentAnswer, ChatSession, EngineError, Role, SessionError, Turn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::{ServeDir, ServeFile};
use tower_http::trace::{DefaultMakeSpan, DefaultOnResponse, TraceLayer};
use tracing::Level;

use crate::app::AppState;

/// Role used for `GET /contracts/{ocs}/summary`.
pub const SUMMARY_ROLE: Role = Role::SupportUnitManager;

pub fn summary_question(ocs: &str) -> String {
    format!("Show a summary of contract {ocs}.")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    Unauthorized,
    NotFound,
    MethodNotAllowed,
    ValidationFailed,
    UpstreamLlm,
    Internal,
}

impl ErrorCode {
    fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::Unauthorized => StatusCode::UNAUTHORIZED,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::MethodNotAllowed => StatusCode::METHOD_NOT_ALLOWED,
            ErrorCode::ValidationFailed => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::UpstreamLlm => StatusCode::BAD_GATEWAY,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            detail: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.code == ErrorCode::Internal {
            tracing::error!(message = %self.message, "internal error");
        }
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::NotFound(_) => ApiError::new(ErrorCode::NotFound, e.to_string()),
            _ => ApiError::new(ErrorCode::Internal, e.to_string()),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::EmptyQuestion | EngineError::ContextOverflow(_) => ApiError::bad_request(e.to_string()),
            EngineError::LlmUnavailable(_) => ApiError::new(ErrorCode::UpstreamLlm, e.to_string()),
            EngineError::ValidationFailed { ref sql, ref verdict } => ApiError {
                code: ErrorCode::ValidationFailed,
                message: e.to_string(),
                detail: Some(json!({ "sql": sql, "verdict": verdict })),
            },
            EngineError::Session(s) => s.into(),
            EngineError::Database(_) => ApiError::new(ErrorCode::Internal, e.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Manifest(_) | PipelineError::Read { .. } | PipelineError::Ingest(_) => ErrorCode::BadRequest,
            PipelineError::Embed(EmbedError::EmptyText) => ErrorCode::BadRequest,
            PipelineError::Embed(_) => ErrorCode::UpstreamLlm,
            PipelineError::Index(_) | PipelineError::Database(_) => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

type Shared = Arc<AppState>;

/// Builds the router. With `ui`, unmatched paths are served from that
/// directory, falling back to its `index.html`.
pub fn router(state: Shared, ui: Option<&FsPath>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/ask", post(ask))
        .route("/ingest", post(ingest))
        .route("/contracts/{ocs}/summary", get(summary))
        .route("/contracts/{number}/{year}/summary", get(summary_split))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .route("/health", get(health));
    let api = match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(dir.join("index.html")))),
        None => api.fallback(unknown_route),
    };
    api.method_not_allowed_fallback(method_not_allowed)
        .layer(
            TraceLayer::new_for_http()
                .make_span_with(DefaultMakeSpan::new().level(Level::INFO))
                .on_response(DefaultOnResponse::new().level(Level::INFO)),
        )
        .with_state(state)
}

async fn require_token(State(state): State<Shared>, req: Request, next: Next) -> Response {
    if let Some(expected) = &state.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if !presented.is_some_and(|p| constant_time_eq(p.as_bytes(), expected.as_bytes())) {
            return ApiError::new(ErrorCode::Unauthorized, "missing or invalid bearer token").into_response();
        }
    }
    next.run(req).await
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn unknown_route() -> ApiError {
    ApiError::new(ErrorCode::NotFound, "no such route")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(ErrorCode::MethodNotAllowed, "method not allowed on this route")
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub role: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub role: Role,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub role: Role,
    pub created_at: String,
    pub history: Vec<Turn>,
}

impl From<&ChatSession> for SessionView {
    fn from(s: &ChatSession) -> Self {
        Self {
            session_id: s.id.clone(),
            role: s.role,
            created_at: s.created_at.to_rfc3339(),
            history: s.history.clone(),
        }
    }
}

async fn create_session(
    State(state): State<Shared>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let Json(body) = body?;
    let role: Role = body.role.parse().map_err(|_| {
        let known: Vec<&str> = Role::ALL.iter().map(|r| r.as_str()).collect();
        ApiError::bad_request(format!(
            "unknown role {:?}; expected one of {}",
            body.role,
            known.join(", ")
        ))
    })?;
    let session_id = state.sessions.create(role)?;
    Ok((StatusCode::CREATED, Json(SessionCreated { session_id, role })))
}

async fn get_session(
    State(state): State<Shared>,
    id: Result<Path<String>, PathRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let Path(id) = id?;
    let session = state.sessions.get(&id)?;
    let session = session.lock().await;
    Ok(Json(SessionView::from(&*session)))
}

#[derive(Debug, Deserialize)]
pub struct AskRequest {
    pub question: String,
}

async fn ask(
    State(state): State<Shared>,
    id: Result<Path<String>, PathRejection>,
    body: Result<Json<AskRequest>, JsonRejection>,
) -> Result<Json<AgentAnswer>, ApiError> {
    let Path(id) = id?;
    let Json(body) = body?;
    let answer = state.engine.ask(&state.sessions, &id, &body.question).await?;
    Ok(Json(answer))
}

#[derive(Debug, Deserialize)]
pub struct IngestRequest {
    pub manifest_path: PathBuf,
}

async fn ingest(
    State(state): State<Shared>,
    body: Result<Json<IngestRequest>, JsonRejection>,
) -> Result<Json<IngestReport>, ApiError> {
    let Json(body) = body?;
    let report = state.ingest(&body.manifest_path).await?;
    tracing::info!(
        documents = report.documents,
        chunks = report.chunks,
        inserted = report.inserted,
        replaced = report.replaced,
        "ingest finished"
    );
    Ok(Json(report))
}

async fn summary(
    State(state): State<Shared>,
    ocs: Result<Path<String>, PathRejection>,
) -> Result<Json<AgentAnswer>, ApiError> {
    let Path(ocs) = ocs?;
    summarize(&state, ocs.trim()).await
}

async fn summary_split(
    State(state): State<Shared>,
    parts: Result<Path<(String, String)>, PathRejection>,
) -> Result<Json<AgentAnswer>, ApiError> {
    let Path((number, year)) = parts?;
    summarize(&state, &format!("{number}/{year}")).await
}

async fn summarize(state: &AppState, id: &str) -> Result<Json<AgentAnswer>, ApiError> {
    if !ocs::is_valid(id) {
        return Err(ApiError::bad_request(format!(
            "{id:?} is not a contract id of the form NNN/YYYY"
        )));
    }
    let db = state
        .engine
        .db()
        .ok_or_else(|| ApiError::new(ErrorCode::NotFound, "no contract database is configured"))?;
    let exists = db
        .contract_exists(id)
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?;
    if !exists {
        return Err(ApiError::new(ErrorCode::NotFound, format!("contract {id} not found")));
    }
    let session = ChatSession::new(format!("summary-{id}"), SUMMARY_ROLE);
    let answer = state.engine.answer(&session, &summary_question(id)).await?;
    Ok(Json(answer))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub indexed_chunks: usize,
    pub database: bool,
}

async fn health(State(state): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        indexed_chunks: state.engine.index().len(),
        database: state.engine.db().is_some(),
    })
}
