// SPDX-License-Identifier: Apache-2.0

//! JSON API over an [`AnnotationStore`].
//!
//! | method | path                          | body / query                               |
//! |--------|-------------------------------|--------------------------------------------|
//! | GET    | `/api/questions`              | `?chapter=&dataset=&labeled=`              |
//! | GET    | `/api/questions/{id}`         |                                            |
//! | GET    | `/api/los`                    | `?query=&chapter=&category=&action=`       |
//! | PUT    | `/api/questions/{id}/labels`  | `{"codes": [...], "expected_revision": n}` |
//! | PUT    | `/api/questions/{id}/notes`   | `{"notes": "...", "expected_revision": n}` |
//! | GET    | `/api/export`                 | `?format=jsonl` for the raw corpus file    |
//!
//! Errors are `{"error": kind, "message": text}`; a revision conflict (409)
//! also carries `"current"`, the state the write lost against.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, put};
use axum::{Json, Router};
use lotag_core::taxonomy::{ActionType, LOCategory, LearningObjective, SearchQuery};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::store::{AnnotationError, AnnotationStore, QuestionFilter};

type Shared = Arc<AnnotationStore>;

pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: json!({ "error": "BadRequest", "message": message.into() }),
        }
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let message = e.to_string();
        let (status, kind) = match &e {
            AnnotationError::NotFound(_) => (StatusCode::NOT_FOUND, "NotFound"),
            AnnotationError::RevisionConflict { .. } => (StatusCode::CONFLICT, "RevisionConflict"),
            AnnotationError::InvalidCode(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidCode"),
            AnnotationError::ChapterMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "ChapterMismatch"),
            AnnotationError::Snapshot { .. } => {
                log::error!("{message}");
                (StatusCode::INTERNAL_SERVER_ERROR, "Storage")
            }
        };
        let mut body = json!({ "error": kind, "message": message });
        if let AnnotationError::RevisionConflict { current, .. } = e {
            body["current"] = json!(current);
        }
        Self { status, body }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Builds the router. `static_dir`, when given, is served at `/`.
pub fn router(store: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/questions", get(list_questions))
        .route("/api/questions/:id", get(get_question))
        .route("/api/questions/:id/labels", put(put_labels))
        .route("/api/questions/:id/notes", put(put_notes))
        .route("/api/los", get(search_los))
        .route("/api/export", get(export))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(no_ui)),
    }
}

async fn no_ui() -> &'static str {
    "lotag annotation service: no UI assets configured; the JSON API is under /api/\n"
}

async fn list_questions(State(store): State<Shared>, Query(filter): Query<QuestionFilter>) -> impl IntoResponse {
    let filter = QuestionFilter {
        chapter: nonempty(filter.chapter),
        dataset: nonempty(filter.dataset),
        labeled: filter.labeled,
    };
    Json(store.list_questions(&filter))
}

async fn get_question(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(store.get_question(&id)?))
}

#[derive(Deserialize)]
struct LoQuery {
    #[serde(default)]
    query: String,
    chapter: Option<String>,
    category: Option<String>,
    action: Option<String>,
}

fn nonempty(s: Option<String>) -> Option<String> {
    s.filter(|s| !s.trim().is_empty())
}

async fn search_los(State(store): State<Shared>, Query(q): Query<LoQuery>) -> ApiResult<Json<Vec<LearningObjective>>> {
    let category = nonempty(q.category)
        .map(|c| c.parse::<LOCategory>())
        .transpose()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let action = nonempty(q.action)
        .map(|a| a.parse::<ActionType>())
        .transpose()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let query = SearchQuery {
        text: q.query,
        chapter: nonempty(q.chapter),
        category,
        action,
    };
    Ok(Json(store.taxonomy().search(&query).into_iter().cloned().collect()))
}

#[derive(Deserialize)]
struct LabelsBody {
    codes: Vec<String>,
    expected_revision: u64,
}

#[derive(Deserialize)]
struct NotesBody {
    notes: String,
    expected_revision: u64,
}

/// Runs a store write off the async executor; writes fsync a snapshot.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, AnnotationError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: json!({ "error": "Internal", "message": e.to_string() }),
        })?
        .map_err(ApiError::from)
}

async fn put_labels(
    State(store): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<LabelsBody>,
) -> ApiResult<impl IntoResponse> {
    let state = blocking(move || store.put_labels(&id, &body.codes, body.expected_revision)).await?;
    Ok(Json(state))
}

async fn put_notes(
    State(store): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<NotesBody>,
) -> ApiResult<impl IntoResponse> {
    let state = blocking(move || store.put_notes(&id, &body.notes, body.expected_revision)).await?;
    Ok(Json(state))
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export(State(store): State<Shared>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    let bundle = store.export();
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(bundle).into_response()),
        Some("jsonl") => {
            let mut resp = bundle.corpus.into_response();
            let headers = resp.headers_mut();
            headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"));
            headers.insert("x-unlabeled-count", HeaderValue::from(bundle.unlabeled.len()));
            Ok(resp)
        }
        Some(other) => Err(ApiError::bad_request(format!("unknown export format {other:?}"))),
    }
}

/// Serves until Ctrl-C.
pub async fn serve(store: Shared, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
