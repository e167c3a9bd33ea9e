//! JSON over HTTP/1.1:
//!
//! - `POST /session` creates or resumes a session.
//! - `GET /session/{id}/queue` lists unanswered cards of the pending round.
//! - `POST /session/{id}/labels` commits verdicts.
//! - `GET /session/{id}/progress` reports budget and pool sizes.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgtyper_core::ledger::LedgerError;
use serde::{Deserialize, Serialize};

use crate::card::Card;
use crate::mailbox::{Accepted, CommitError, LabelInput, Progress, Rejection};
use crate::service::{CreateSession, Service, ServiceError, Session};

/// Poll interval suggested when no round is pending.
pub const RETRY_AFTER_MS: u64 = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueResponse {
    pub session: String,
    pub round: Option<u64>,
    pub cards: Vec<Card>,
    /// The run finished or the budget is spent; no more cards will come.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelsRequest {
    #[serde(default = "default_annotator")]
    pub annotator: String,
    pub labels: Vec<LabelInput>,
}

fn default_annotator() -> String {
    "http".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelsAck {
    pub accepted: Vec<Accepted>,
    pub progress: Progress,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<Rejection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub accepted: Vec<Accepted>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressResponse {
    pub session: String,
    #[serde(flatten)]
    pub progress: Progress,
}

struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, error: impl ToString) -> Self {
        Self(
            status,
            ErrorBody {
                error: error.to_string(),
                rejected: Vec::new(),
                accepted: Vec::new(),
            },
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::BadId(_) | ServiceError::Launch(_) => StatusCode::BAD_REQUEST,
            ServiceError::Running(_) | ServiceError::Ledger(LedgerError::DigestMismatch { .. }) => {
                StatusCode::CONFLICT
            }
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Ledger(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e)
    }
}

fn find(svc: &Service, id: &str) -> Result<Arc<Session>, ApiError> {
    svc.session(id)
        .ok_or_else(|| ServiceError::NotFound(id.to_string()).into())
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?
}

async fn create_session(
    State(svc): State<Arc<Service>>,
    body: Option<Json<CreateSession>>,
) -> Result<impl IntoResponse, ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let created = blocking(move || svc.create(&req).map_err(ApiError::from)).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn queue(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let session = find(&svc, &id)?;
    let view = session.mailbox.queue();
    let waiting = view.cards.is_empty() && !view.complete;
    let body = QueueResponse {
        session: id,
        round: view.round,
        cards: view.cards,
        complete: view.complete,
        retry_after_ms: waiting.then_some(RETRY_AFTER_MS),
    };
    let mut resp = Json(body).into_response();
    if waiting {
        let secs = RETRY_AFTER_MS.div_ceil(1000).to_string();
        resp.headers_mut().insert(
            header::RETRY_AFTER,
            HeaderValue::from_str(&secs).expect("ascii digits"),
        );
    }
    Ok(resp)
}

async fn labels(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Json(req): Json<LabelsRequest>,
) -> Result<Json<LabelsAck>, ApiError> {
    let session = find(&svc, &id)?;
    blocking(
        move || match session.mailbox.commit(&req.annotator, &req.labels) {
            Ok(accepted) => Ok(Json(LabelsAck {
                accepted,
                progress: session.mailbox.progress(),
            })),
            Err(CommitError::Rejected(rejected)) => Err(ApiError(
                StatusCode::UNPROCESSABLE_ENTITY,
                ErrorBody {
                    error: format!("{} label(s) rejected; nothing committed", rejected.len()),
                    rejected,
                    accepted: Vec::new(),
                },
            )),
            Err(CommitError::Ledger { accepted, error }) => Err(ApiError(
                StatusCode::INTERNAL_SERVER_ERROR,
                ErrorBody {
                    error: error.to_string(),
                    rejected: Vec::new(),
                    accepted,
                },
            )),
        },
    )
    .await
}

async fn progress(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
) -> Result<Json<ProgressResponse>, ApiError> {
    let session = find(&svc, &id)?;
    Ok(Json(ProgressResponse {
        session: id,
        progress: session.mailbox.progress(),
    }))
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}/queue", get(queue))
        .route("/session/{id}/labels", post(labels))
        .route("/session/{id}/progress", get(progress))
        .with_state(svc)
}
