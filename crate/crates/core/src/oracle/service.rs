//! HTTP front of the annotation queue.
//!
//! | route                              | body / query                               | reply |
//! |------------------------------------|--------------------------------------------|-------|
//! | `POST /v1/queries`                 | `QueryBatch`                               | 202   |
//! | `GET /v1/queries`                  | `status=pending\|answered\|all`, `run_id`  | 200   |
//! | `POST /v1/labels`                  | `{sample_id, outcome}`                     | 200, 404, 422 |
//! | `GET /v1/runs/{run_id}/progress`   |                                            | 200   |
//! | `POST /v1/runs/{run_id}/stages/{stage}/close` |                                 | 200   |

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::queue::{AnnotationQueue, Progress, QueryBatch, QueryStatus, QueryView, Submission};
use super::OracleOutcome;
use crate::datapool::SampleId;
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub sample_id: SampleId,
    pub outcome: Submission,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedQuery {
    pub sample_id: SampleId,
    pub outcome: OracleOutcome,
}

#[derive(Debug, Deserialize)]
struct ListParams {
    status: Option<String>,
    run_id: Option<String>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError(r.status(), r.body_text())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::LabelRange { .. } | Error::Contract(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::PoolMembership { .. } => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

pub fn router(queue: Arc<AnnotationQueue>) -> Router {
    Router::new()
        .route("/v1/queries", post(enqueue).get(list))
        .route("/v1/labels", post(submit))
        .route("/v1/runs/{run_id}/progress", get(progress))
        .route("/v1/runs/{run_id}/stages/{stage}/close", post(close))
        .with_state(queue)
}

async fn enqueue(
    State(q): State<Arc<AnnotationQueue>>,
    batch: Result<Json<QueryBatch>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(batch) = batch?;
    let accepted = q.enqueue(batch)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "accepted": accepted }))))
}

async fn list(State(q): State<Arc<AnnotationQueue>>, Query(p): Query<ListParams>) -> Result<Json<Vec<QueryView>>, ApiError> {
    let status = match p.status.as_deref() {
        None | Some("pending") => Some(QueryStatus::Pending),
        Some("answered") => Some(QueryStatus::Answered),
        Some("all") => None,
        Some(other) => return Err(ApiError(StatusCode::BAD_REQUEST, format!("unknown status {other:?}"))),
    };
    Ok(Json(q.list(status, p.run_id.as_deref())))
}

async fn submit(
    State(q): State<Arc<AnnotationQueue>>,
    body: Result<Json<LabelSubmission>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(s) = body?;
    let outcome = q.submit(s.sample_id, s.outcome)?;
    Ok(Json(ClosedQuery { sample_id: s.sample_id, outcome }))
}

async fn progress(State(q): State<Arc<AnnotationQueue>>, Path(run_id): Path<String>) -> Json<Progress> {
    Json(q.progress(&run_id))
}

async fn close(State(q): State<Arc<AnnotationQueue>>, Path((run_id, stage)): Path<(String, usize)>) -> Json<Vec<ClosedQuery>> {
    Json(q.close_stage(&run_id, stage).into_iter().map(|(sample_id, outcome)| ClosedQuery { sample_id, outcome }).collect())
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    queue: Arc<AnnotationQueue>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(queue)).with_graceful_shutdown(shutdown).await
}

/// A server on its own runtime thread, stopped on drop. Used to put a
/// human-oracle endpoint next to a synchronous labeling loop.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    pub queue: Arc<AnnotationQueue>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    pub fn start(addr: SocketAddr, queue: Arc<AnnotationQueue>) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let q = Arc::clone(&queue);
        let thread = std::thread::spawn(move || {
            if let Err(e) = runtime.block_on(serve(listener, q, async {
                stopped.await.ok();
            })) {
                tracing::error!("oracle service stopped: {e}");
            }
        });
        Ok(BackgroundServer { addr, queue, stop: Some(stop), thread: Some(thread) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            stop.send(()).ok();
        }
        if let Some(t) = self.thread.take() {
            t.join().ok();
        }
    }
}
