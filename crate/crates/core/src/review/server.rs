//! HTTP API over a [`ReviewStore`].
//!
//! | route | reply |
//! |---|---|
//! | `GET /api/review/next?moderator=<id>` | 200 [`ReviewItem`] or 204 |
//! | `POST /api/review/verdict` | 201, 409 duplicate, 404 unknown qa_id or moderator, 422 wrong round |
//! | `GET /api/review/progress?moderator=<id>` | 200 `{done, remaining}` |
//! | `GET /api/review/report` | 200 [`ErrorReport`](super::ErrorReport), 409 while pairs are pending |
//!
//! Replies to a moderator depend only on the campaign and that moderator's
//! own verdicts.

use std::future::Future;
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tracing::{error, info};

use super::{error_report, RejectReason, ReviewError, ReviewStore, SubmitOutcome, VerdictSubmission};

pub type SharedStore = Arc<Mutex<ReviewStore>>;

#[derive(Debug, Deserialize)]
struct ModeratorQuery {
    moderator: String,
}

fn err(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn review_err(e: ReviewError) -> Response {
    match e {
        ReviewError::UnknownModerator(m) => err(StatusCode::NOT_FOUND, format!("unknown moderator `{m}`")),
        other => {
            error!(error = %other, "review store failure");
            err(StatusCode::INTERNAL_SERVER_ERROR, other.to_string())
        }
    }
}

async fn next(State(store): State<SharedStore>, Query(q): Query<ModeratorQuery>) -> Response {
    let store = store.lock().expect("review store poisoned");
    match store.assign_next(&q.moderator) {
        Ok(Some(item)) => Json(item).into_response(),
        Ok(None) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => review_err(e),
    }
}

async fn verdict(State(store): State<SharedStore>, Json(sub): Json<VerdictSubmission>) -> Response {
    let mut store = store.lock().expect("review store poisoned");
    match store.submit(sub) {
        Ok(SubmitOutcome::Accepted(v)) => (
            StatusCode::CREATED,
            Json(json!({
                "status": "accepted",
                "qa_id": v.qa_id,
                "round_index": v.round_index,
            })),
        )
            .into_response(),
        Ok(SubmitOutcome::Rejected(reason)) => {
            let status = match reason {
                RejectReason::Duplicate => StatusCode::CONFLICT,
                RejectReason::UnknownQa | RejectReason::UnknownModerator => StatusCode::NOT_FOUND,
                RejectReason::RoundMismatch => StatusCode::UNPROCESSABLE_ENTITY,
            };
            (status, Json(json!({ "error": reason }))).into_response()
        }
        Err(e) => review_err(e),
    }
}

async fn progress(State(store): State<SharedStore>, Query(q): Query<ModeratorQuery>) -> Response {
    let store = store.lock().expect("review store poisoned");
    match store.progress(&q.moderator) {
        Ok(p) => Json(p).into_response(),
        Err(e) => review_err(e),
    }
}

async fn report(State(store): State<SharedStore>) -> Response {
    let store = store.lock().expect("review store poisoned");
    let (done, pending) = store.adjudicate_all();
    if !pending.is_empty() {
        return (
            StatusCode::CONFLICT,
            Json(json!({ "error": "pending", "pending": pending.len() })),
        )
            .into_response();
    }
    Json(error_report(&done)).into_response()
}

pub fn router(store: SharedStore) -> Router {
    Router::new()
        .route("/api/review/next", get(next))
        .route("/api/review/verdict", post(verdict))
        .route("/api/review/progress", get(progress))
        .route("/api/review/report", get(report))
        .with_state(store)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    store: SharedStore,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        info!(%addr, "review service listening");
    }
    axum::serve(listener, router(store))
        .with_graceful_shutdown(shutdown)
        .await
}
