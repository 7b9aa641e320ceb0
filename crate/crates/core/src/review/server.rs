//! Review API consumed by the browser UI.
//!
//! `GET /queue?status=`, `GET /item/{id}`, `GET /video/{id}`,
//! `POST /decision`, `GET /progress`, optional static UI under `/ui/`.
//! Every accepted decision is appended to the log before the in-memory
//! snapshot is swapped, so a restart replays to the same state.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::{ServeDir, ServeFile};

use super::{resolve, DecisionLog, ReviewAction, ReviewDecision, ReviewError, ReviewStatus, ReviewTask};
use crate::corpus::QAItem;

pub const TOKEN_HEADER: &str = "x-review-token";

#[derive(Debug, Clone, Default)]
pub struct ReviewServerConfig {
    /// Shared secret expected in the `x-review-token` header.
    pub token: Option<String>,
    /// Prefix for relative video paths.
    pub media_root: Option<PathBuf>,
    /// Static UI bundle served under `/ui/`.
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub decided: usize,
    pub pending: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub edited: usize,
}

struct Snapshot {
    tasks: BTreeMap<String, ReviewTask>,
}

pub struct ReviewState {
    base: BTreeMap<String, ReviewTask>,
    log: DecisionLog,
    decisions: Mutex<Vec<ReviewDecision>>,
    snapshot: RwLock<Arc<Snapshot>>,
    config: ReviewServerConfig,
}

impl ReviewState {
    /// Loads any decisions already in the log on top of `queue`.
    pub fn open(queue: Vec<ReviewTask>, log: DecisionLog, config: ReviewServerConfig) -> Result<Self, ReviewError> {
        let base: BTreeMap<String, ReviewTask> = queue.into_iter().map(|t| (t.item.id.clone(), t)).collect();
        let decisions = log.load()?;
        for d in &decisions {
            if !base.contains_key(&d.item_id) {
                return Err(ReviewError::UnknownItemId(d.item_id.clone()));
            }
        }
        let snapshot = Arc::new(Self::fold(&base, &decisions));
        Ok(ReviewState {
            base,
            log,
            decisions: Mutex::new(decisions),
            snapshot: RwLock::new(snapshot),
            config,
        })
    }

    fn fold(base: &BTreeMap<String, ReviewTask>, decisions: &[ReviewDecision]) -> Snapshot {
        let (winners, _) = resolve(decisions);
        let mut tasks = base.clone();
        for (id, d) in winners {
            let t = tasks.get_mut(id).expect("validated id");
            t.status = d.action.into();
            t.editor_note = d.note.clone();
            if let Some(r) = &d.replacement {
                t.item = r.clone();
            }
        }
        Snapshot { tasks }
    }

    fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Validates, persists and applies one decision.
    pub fn submit(&self, d: ReviewDecision) -> Result<ReviewTask, ReviewError> {
        if !self.base.contains_key(&d.item_id) {
            return Err(ReviewError::UnknownItemId(d.item_id));
        }
        d.validate()?;
        let mut log = self.decisions.lock().unwrap_or_else(|e| e.into_inner());
        self.log.append(&d)?;
        log.push(d.clone());
        let next = Arc::new(Self::fold(&self.base, &log));
        let task = next.tasks[&d.item_id].clone();
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = next;
        Ok(task)
    }

    pub fn tasks(&self, status: Option<ReviewStatus>) -> Vec<ReviewTask> {
        self.snapshot()
            .tasks
            .values()
            .filter(|t| status.is_none_or(|s| t.status == s))
            .cloned()
            .collect()
    }

    pub fn task(&self, id: &str) -> Option<ReviewTask> {
        self.snapshot().tasks.get(id).cloned()
    }

    pub fn progress(&self) -> Progress {
        let snap = self.snapshot();
        let mut p = Progress {
            total: snap.tasks.len(),
            ..Default::default()
        };
        for t in snap.tasks.values() {
            match t.status {
                ReviewStatus::Pending => p.pending += 1,
                ReviewStatus::Accepted => p.accepted += 1,
                ReviewStatus::Rejected => p.rejected += 1,
                ReviewStatus::Edited => p.edited += 1,
            }
        }
        p.decided = p.total - p.pending;
        p
    }

    pub fn decisions(&self) -> Vec<ReviewDecision> {
        self.decisions.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// Decision body as posted by clients; the server stamps a missing timestamp.
#[derive(Debug, Deserialize)]
struct DecisionBody {
    item_id: String,
    action: ReviewAction,
    #[serde(default)]
    replacement: Option<QAItem>,
    #[serde(default)]
    reviewer: String,
    #[serde(default)]
    timestamp: Option<DateTime<Utc>>,
    #[serde(default)]
    note: String,
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    status: Option<String>,
}

fn error(status: StatusCode, msg: impl std::fmt::Display) -> Response {
    (status, Json(json!({"error": msg.to_string()}))).into_response()
}

pub fn router(state: Arc<ReviewState>) -> Router {
    let mut app = Router::new()
        .route("/queue", get(queue))
        .route("/item/{id}", get(item))
        .route("/video/{id}", get(video))
        .route("/decision", post(decision))
        .route("/progress", get(progress));
    if state.config.token.is_some() {
        app = app.route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    }
    let mut app = app.with_state(state.clone());
    if let Some(dir) = &state.config.ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app
}

async fn require_token(State(state): State<Arc<ReviewState>>, headers: HeaderMap, req: Request, next: Next) -> Response {
    let expected = state.config.token.as_deref().unwrap_or_default();
    match headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok()) {
        Some(t) if t == expected => next.run(req).await,
        _ => error(StatusCode::UNAUTHORIZED, "missing or wrong review token"),
    }
}

async fn queue(State(state): State<Arc<ReviewState>>, Query(q): Query<QueueQuery>) -> Response {
    let status = match q.status.as_deref().filter(|s| !s.is_empty()) {
        None => None,
        Some(s) => match s.parse::<ReviewStatus>() {
            Ok(s) => Some(s),
            Err(e) => return error(StatusCode::BAD_REQUEST, e),
        },
    };
    Json(state.tasks(status)).into_response()
}

async fn item(State(state): State<Arc<ReviewState>>, Path(id): Path<String>) -> Response {
    match state.task(&id) {
        Some(t) => Json(t).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown item {id:?}")),
    }
}

async fn video(State(state): State<Arc<ReviewState>>, Path(id): Path<String>, req: Request<Body>) -> Response {
    let Some(task) = state.task(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown item {id:?}"));
    };
    let video = &task.item.video;
    match video.local_path() {
        Some(local) => {
            let p = PathBuf::from(local);
            let path = match &state.config.media_root {
                Some(root) if p.is_relative() => root.join(p),
                _ => p,
            };
            match ServeFile::new(path).try_call(req).await {
                Ok(resp) => resp.map(Body::new).into_response(),
                Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
            }
        }
        None => Redirect::temporary(&video.uri).into_response(),
    }
}

async fn decision(State(state): State<Arc<ReviewState>>, body: Bytes) -> Response {
    let b: DecisionBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid decision body: {e}")),
    };
    let d = ReviewDecision {
        item_id: b.item_id,
        action: b.action,
        replacement: b.replacement,
        reviewer: b.reviewer,
        timestamp: b.timestamp.unwrap_or_else(Utc::now),
        note: b.note,
    };
    let result = tokio::task::spawn_blocking(move || state.submit(d)).await;
    match result {
        Ok(Ok(task)) => Json(task).into_response(),
        Ok(Err(e @ ReviewError::UnknownItemId(_))) => error(StatusCode::NOT_FOUND, e),
        Ok(Err(e @ ReviewError::InvalidDecision { .. })) => error(StatusCode::BAD_REQUEST, e),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn progress(State(state): State<Arc<ReviewState>>) -> Response {
    let p = state.progress();
    ([(header::CACHE_CONTROL, "no-store")], Json(p)).into_response()
}
