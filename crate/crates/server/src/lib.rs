//! HTTP API behind the rater console. Raters only ever see blinded items:
//! suggestion texts keyed by slot id, never the method that produced them.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use compromise_core::study::{
    instructions, rating_intro, BlindedItem, Progress, RatingRecord, RatingStore,
};
use compromise_core::Error;

pub type SharedStore = Arc<RatingStore>;

/// What the console should show next for a rater.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum NextStep {
    Item {
        item: BlindedItem,
        /// Rating-page preamble with both original suggestions filled in.
        rating_intro: String,
        progress: Progress,
    },
    Demographics {
        questions: Vec<String>,
        progress: Progress,
    },
    Done {
        progress: Progress,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemographicsRequest {
    pub rater_id: String,
    pub answers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
    pub progress: Progress,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        let status = match &e {
            Error::Rating(m) if m.starts_with("unknown rater") => StatusCode::NOT_FOUND,
            Error::Rating(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, msg)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

async fn get_instructions() -> impl IntoResponse {
    Json(instructions())
}

async fn next(
    State(store): State<SharedStore>,
    Path(rater_id): Path<String>,
) -> Result<Json<NextStep>, ApiError> {
    let progress = store.progress(&rater_id)?;
    let step = match store.next_item(&rater_id)? {
        Some(item) => NextStep::Item {
            rating_intro: rating_intro(&item.suggestions_a, &item.suggestions_b),
            item,
            progress,
        },
        None if !progress.demographics_submitted => NextStep::Demographics {
            questions: instructions()
                .demographic_questions
                .iter()
                .map(|s| s.to_string())
                .collect(),
            progress,
        },
        None => NextStep::Done { progress },
    };
    Ok(Json(step))
}

async fn progress(
    State(store): State<SharedStore>,
    Path(rater_id): Path<String>,
) -> Result<Json<Progress>, ApiError> {
    Ok(Json(store.progress(&rater_id)?))
}

async fn rating(
    State(store): State<SharedStore>,
    Json(mut record): Json<RatingRecord>,
) -> Result<Json<Ack>, ApiError> {
    if record.timestamp == 0 {
        record.timestamp = now_ms();
    }
    let rater_id = record.rater_id.clone();
    store.record_rating(record)?;
    Ok(Json(Ack {
        accepted: true,
        progress: store.progress(&rater_id)?,
    }))
}

async fn demographics(
    State(store): State<SharedStore>,
    Json(req): Json<DemographicsRequest>,
) -> Result<Json<Ack>, ApiError> {
    store.record_demographics(&req.rater_id, req.answers, now_ms())?;
    Ok(Json(Ack {
        accepted: true,
        progress: store.progress(&req.rater_id)?,
    }))
}

pub fn router(store: SharedStore) -> Router {
    Router::new()
        .route("/api/instructions", get(get_instructions))
        .route("/api/session/{rater_id}/next", get(next))
        .route("/api/session/{rater_id}/progress", get(progress))
        .route("/api/rating", post(rating))
        .route("/api/demographics", post(demographics))
        .with_state(store)
}

/// Serves the API until the process is stopped.
pub async fn serve(addr: SocketAddr, store: SharedStore) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("study API listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}
