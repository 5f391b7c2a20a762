use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::routing::{get, post};
use axum::{Json, Router};
use tower_http::services::ServeDir;

use crate::error::ReviewError;
use crate::model::*;
use crate::store::{Reviewer, ReviewStore};

pub type SharedStore = Arc<ReviewStore>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get("authorization")?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

fn reviewer(store: &ReviewStore, headers: &HeaderMap) -> Result<Reviewer, ReviewError> {
    store.authenticate(bearer(headers))
}

fn body<T>(r: Result<Json<T>, JsonRejection>) -> Result<T, ReviewError> {
    r.map(|Json(v)| v).map_err(|e| ReviewError::BadRequest(e.body_text()))
}

/// Runs blocking store work (fsync, file writes) off the async workers.
async fn blocking<T: Send + 'static>(
    store: SharedStore,
    f: impl FnOnce(&ReviewStore) -> Result<T, ReviewError> + Send + 'static,
) -> Result<T, ReviewError> {
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ReviewError::Storage(format!("worker failed: {e}")))?
}

async fn list_tasks(
    State(store): State<SharedStore>,
    headers: HeaderMap,
    q: Result<Query<TaskQuery>, QueryRejection>,
) -> Result<Json<TaskPage>, ReviewError> {
    reviewer(&store, &headers)?;
    let Query(q) = q.map_err(|e| ReviewError::BadRequest(e.body_text()))?;
    Ok(Json(store.list_tasks(&q)))
}

async fn get_task(
    State(store): State<SharedStore>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Json<TaskDetail>, ReviewError> {
    reviewer(&store, &headers)?;
    store.get_task(&id).map(Json)
}

async fn adjudicate(
    State(store): State<SharedStore>,
    headers: HeaderMap,
    Path(id): Path<String>,
    req: Result<Json<SubmitRequest>, JsonRejection>,
) -> Result<Json<SubmitResponse>, ReviewError> {
    let who = reviewer(&store, &headers)?;
    let req = body(req)?;
    blocking(store, move |s| s.submit(&id, &req, &who)).await.map(Json)
}

async fn reopen(
    State(store): State<SharedStore>,
    headers: HeaderMap,
    Path(id): Path<String>,
    req: Result<Json<ReopenRequest>, JsonRejection>,
) -> Result<Json<ReviewTask>, ReviewError> {
    let who = reviewer(&store, &headers)?;
    let req = body(req)?;
    blocking(store, move |s| s.reopen(&id, &req, &who)).await.map(Json)
}

async fn export(
    State(store): State<SharedStore>,
    headers: HeaderMap,
    req: Result<Json<ExportRequest>, JsonRejection>,
) -> Result<Json<ExportResponse>, ReviewError> {
    reviewer(&store, &headers)?;
    let req = body(req)?;
    blocking(store, move |s| s.export(&req)).await.map(Json)
}

/// API routes at the root; `ui_dir`, when given, serves static files for all other paths.
pub fn router(store: SharedStore, ui_dir: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/adjudicate", post(adjudicate))
        .route("/tasks/{id}/reopen", post(reopen))
        .route("/export", post(export))
        .with_state(store);
    match ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.fallback(|| async { ReviewError::NotFound("route".into()) }),
    }
}

/// Binds and serves until ctrl-c.
pub async fn serve(store: SharedStore, addr: std::net::SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    axum::serve(listener, router(store, ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
