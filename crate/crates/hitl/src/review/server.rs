//! HTTP front of the review queue.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/queue?task=&limit=&reviewer=` | pending items, enqueue order |
//! | GET | `/api/items/{id}` | one item |
//! | POST | `/api/items/{id}/review` | body `{label, reviewer_id}` |
//! | POST | `/api/items/{id}/lease` | body `{reviewer_id, seconds}`, advisory |
//! | GET | `/api/progress` | `{pending, reviewed, her_so_far}` |
//!
//! Writes go through one mutex-guarded [`ReviewStore`]; reads load the
//! latest published [`Snapshot`] without locking.

use std::path::PathBuf;
use std::sync::Arc;

use arc_swap::ArcSwap;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use hitl_core::TaskKind;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use super::store::{ReviewError, ReviewStore, Snapshot};

pub const DEFAULT_QUEUE_LIMIT: usize = 50;
const MAX_LEASE_SECONDS: i64 = 24 * 3600;

pub struct AppState {
    writer: Mutex<ReviewStore>,
    snapshot: ArcSwap<Snapshot>,
    token: Option<String>,
}

impl AppState {
    pub fn new(store: ReviewStore, token: Option<String>) -> Arc<Self> {
        let snapshot = ArcSwap::from_pointee(store.snapshot().clone());
        Arc::new(AppState { writer: Mutex::new(store), snapshot, token })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.load_full()
    }

    async fn mutate<T>(&self, f: impl FnOnce(&mut ReviewStore) -> Result<T, ReviewError>) -> Result<T, ApiError> {
        let mut store = self.writer.lock().await;
        let out = f(&mut store)?;
        self.snapshot.store(Arc::new(store.snapshot().clone()));
        Ok(out)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let (status, code) = match &e {
            ReviewError::UnknownItem(_) => (StatusCode::NOT_FOUND, "unknown_item"),
            ReviewError::AlreadyReviewed(_) => (StatusCode::CONFLICT, "already_reviewed"),
            ReviewError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ReviewError::LabelOutOfRange(_) => (StatusCode::UNPROCESSABLE_ENTITY, "label_out_of_range"),
            ReviewError::Io(_) | ReviewError::Corrupt { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad_body", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    task: Option<String>,
    limit: Option<usize>,
    reviewer: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ReviewBody {
    label: i64,
    reviewer_id: String,
}

#[derive(Debug, Deserialize)]
struct LeaseBody {
    reviewer_id: String,
    #[serde(default = "default_lease")]
    seconds: i64,
}

fn default_lease() -> i64 {
    600
}

async fn queue(State(app): State<Arc<AppState>>, Query(q): Query<QueueParams>) -> Result<Response, ApiError> {
    let task = match q.task.as_deref().filter(|t| !t.is_empty()) {
        Some(t) => Some(
            TaskKind::parse(t)
                .map_err(|_| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_task", format!("unknown task {t}")))?,
        ),
        None => None,
    };
    let limit = q.limit.unwrap_or(DEFAULT_QUEUE_LIMIT);
    let items = app.snapshot().next_pending(task, limit, q.reviewer.as_deref(), Utc::now());
    Ok(Json(items).into_response())
}

async fn item(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let snap = app.snapshot();
    let it = snap.get(&id).ok_or(ReviewError::UnknownItem(id.clone()))?;
    Ok(Json(it).into_response())
}

async fn review(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ReviewBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(body) = body?;
    if body.reviewer_id.trim().is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad_body", "reviewer_id is empty"));
    }
    let updated = app.mutate(|s| s.submit_review(&id, body.label, &body.reviewer_id, Utc::now())).await?;
    Ok(Json(updated).into_response())
}

async fn lease(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<LeaseBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(body) = body?;
    if !(1..=MAX_LEASE_SECONDS).contains(&body.seconds) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad_body", "seconds out of range"));
    }
    let until = Utc::now() + chrono::Duration::seconds(body.seconds);
    let updated = app.mutate(|s| s.lease(&id, &body.reviewer_id, until)).await?;
    Ok(Json(updated).into_response())
}

async fn progress(State(app): State<Arc<AppState>>) -> Response {
    Json(app.snapshot().progress()).into_response()
}

async fn require_token(State(app): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

pub fn router(app: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/items/{id}", get(item))
        .route("/api/items/{id}/review", post(review))
        .route("/api/items/{id}/lease", post(lease))
        .route("/api/progress", get(progress))
        .route_layer(middleware::from_fn_with_state(app.clone(), require_token))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(
    store: ReviewStore,
    addr: std::net::SocketAddr,
    token: Option<String>,
    static_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let app = router(AppState::new(store, token), static_dir);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("review service listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
