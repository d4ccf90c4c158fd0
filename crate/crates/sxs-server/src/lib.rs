//! HTTP front for the side-by-side rating queue.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use divbench_core::sxs::{CiMethod, RatingInput, SxsError, SxsStore, TaskView};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

const FALLBACK_PAGE: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>divbench SxS</title></head>\n<body><p>The rating API is at /api. No rater UI assets were configured.</p></body></html>\n";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SxsStore>,
    pub ci: CiMethod,
}

pub struct ApiError(SxsError);

impl From<SxsError> for ApiError {
    fn from(e: SxsError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            SxsError::UnknownRater(_) => StatusCode::FORBIDDEN,
            SxsError::UnknownTask(_) | SxsError::NoRatings => StatusCode::NOT_FOUND,
            SxsError::NotServed { .. } | SxsError::TaskFull(_) => StatusCode::CONFLICT,
            SxsError::OptionOutOfRange(_) | SxsError::PromptMismatch { .. } | SxsError::Malformed(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

#[derive(Deserialize)]
struct NextQuery {
    rater_id: String,
}

async fn next_task(State(st): State<AppState>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    Ok(match st.store.next_task(&q.rater_id)? {
        Some(task) => Json(TaskView::from(&task)).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(State(st): State<AppState>, Json(input): Json<RatingInput>) -> Result<Response, ApiError> {
    let store = st.store.clone();
    let ack = tokio::task::spawn_blocking(move || store.submit(&input))
        .await
        .map_err(|e| SxsError::Io(std::io::Error::other(e)))??;
    Ok(Json(ack).into_response())
}

async fn summary(State(st): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(st.store.summary(st.ci)?).into_response())
}

async fn export(State(st): State<AppState>) -> Result<Response, ApiError> {
    let body = st.store.export_csv()?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response())
}

/// The API under `/api`, and the rater UI assets (or a stub page) at `/`.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/ratings", post(submit))
        .route("/api/summary", get(summary))
        .route("/api/export.csv", get(export))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api.route("/", get(|| async { Html(FALLBACK_PAGE) })),
    }
}

pub async fn serve(addr: SocketAddr, state: AppState, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}
