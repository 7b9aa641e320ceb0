//! `POST /score` and `GET /healthz`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CompletionInput, RewardError, RewardGroup, RewardScorer, TrainerMetadata};
use crate::corpus::Manifest;
use crate::gateway::Gateway;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub completions: Vec<CompletionInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub groups: Vec<RewardGroup>,
    pub trainer: TrainerMetadata,
}

pub struct RewardService {
    pub manifest: Manifest,
    pub scorer: RewardScorer,
    pub gateway: Arc<Gateway>,
    pub trainer: TrainerMetadata,
}

impl RewardService {
    pub fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, RewardError> {
        let groups = self.scorer.score_batch(&req.completions, &self.manifest, &self.gateway)?;
        Ok(ScoreResponse {
            groups,
            trainer: TrainerMetadata {
                lambda: self.scorer.weights.lambda,
                ..self.trainer.clone()
            },
        })
    }
}

pub fn router(service: Arc<RewardService>) -> Router {
    Router::new()
        .route("/score", post(score))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(service)
}

fn error(status: StatusCode, msg: impl std::fmt::Display) -> Response {
    (status, Json(json!({"error": msg.to_string()}))).into_response()
}

async fn score(State(svc): State<Arc<RewardService>>, body: Bytes) -> Response {
    let req: ScoreRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")),
    };
    let result = tokio::task::spawn_blocking(move || svc.score(&req)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e @ RewardError::UnknownItem(_))) => error(StatusCode::UNPROCESSABLE_ENTITY, e),
        Ok(Err(e @ (RewardError::GroupTooSmall { .. } | RewardError::NonFinite | RewardError::InvalidConfig(_)))) => {
            error(StatusCode::BAD_REQUEST, e)
        }
        Ok(Err(e @ RewardError::Gateway(_))) => error(StatusCode::BAD_GATEWAY, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}
