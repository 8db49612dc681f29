//! HTTP API over a [`SessionManager`].
//!
//! | Method | Path | Body | Reply |
//! |---|---|---|---|
//! | POST | `/sessions` | `{task_goal, policy_scope?, strategy?, label?}` | 201 `{session_id, status, strategy}` |
//! | POST | `/sessions/{id}/steps` | `{thought, proposed_action}` | 200 step outcome with verdict |
//! | POST | `/sessions/{id}/close` | optional `{completed, entry_results}` | 200 close summary |
//! | POST | `/sessions/{id}/flush` | none | 200 `{session_id, outcomes}` |
//! | POST | `/policies/ingest` | `{doc_id, kind, content, origin?}` | 200 ingest report |
//! | GET | `/policies?category=&scope=` | none | 200 `{policies}` |
//! | GET | `/metrics` | none | 200 metrics report |
//!
//! Errors are `{"error": {"code", "message"}}` with a 4xx or 5xx status.
//! Core calls block, so every handler runs them on the blocking pool.

mod error;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use policyguard_core::enhancement::{DocumentKind, SourceDocument};
use policyguard_core::policy::{Policy, PolicyCategory};
use policyguard_core::session::{GroundTruth, NewSession, SessionManager};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use error::ApiError;

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    manager: Arc<SessionManager>,
}

impl AppState {
    pub fn new(manager: Arc<SessionManager>) -> Self {
        AppState { manager }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/steps", post(submit_step))
        .route("/sessions/{id}/close", post(close_session))
        .route("/sessions/{id}/flush", post(flush_session))
        .route("/policies/ingest", post(ingest))
        .route("/policies", get(query_policies))
        .route("/metrics", get(metrics))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&SessionManager) -> ApiResult<T> + Send + 'static,
{
    let manager = state.manager.clone();
    tokio::task::spawn_blocking(move || f(&manager))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    Ok(payload?.0)
}

#[derive(Debug, Serialize)]
struct Created {
    session_id: String,
    status: &'static str,
    strategy: String,
}

async fn create_session(
    State(state): State<AppState>,
    payload: Result<Json<NewSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Created>)> {
    let req = body(payload)?;
    let created = blocking(&state, move |m| {
        let id = m.create_session(req)?;
        let strategy = m.get(&id)?.strategy.as_str().to_string();
        Ok(Created {
            session_id: id,
            status: "active",
            strategy,
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepBody {
    thought: String,
    proposed_action: String,
}

async fn submit_step(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<StepBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let step = body(payload)?;
    blocking(&state, move |m| {
        let out = m.submit_step(&id, &step.thought, &step.proposed_action)?;
        Ok(Json(serde_json::to_value(out).expect("step outcome serializes")))
    })
    .await
}

async fn close_session(State(state): State<AppState>, Path(id): Path<String>, raw: Bytes) -> ApiResult<Json<Value>> {
    let truth: Option<GroundTruth> = if raw.iter().all(u8::is_ascii_whitespace) {
        None
    } else {
        Some(
            serde_json::from_slice(&raw)
                .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "malformed_body", e.to_string()))?,
        )
    };
    blocking(&state, move |m| {
        let summary = m.close_session(&id, truth)?;
        Ok(Json(serde_json::to_value(summary).expect("close summary serializes")))
    })
    .await
}

async fn flush_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&state, move |m| {
        let outcomes = m.flush(&id)?;
        Ok(Json(json!({ "session_id": id, "outcomes": outcomes })))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestBody {
    doc_id: String,
    kind: DocumentKind,
    content: String,
    #[serde(default)]
    origin: Option<String>,
}

async fn ingest(
    State(state): State<AppState>,
    payload: Result<Json<IngestBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req = body(payload)?;
    if req.doc_id.trim().is_empty() {
        return Err(ApiError::bad_request("doc_id must not be empty"));
    }
    blocking(&state, move |m| {
        let origin = req.origin.unwrap_or_else(|| req.doc_id.clone());
        let doc = SourceDocument::from_text(req.doc_id, req.kind, &req.content, origin)
            .map_err(policyguard_core::session::SessionError::from)?;
        let report = m.ingest(&doc)?;
        let policy_count = report.inserted.len();
        Ok(Json(json!({ "policy_count": policy_count, "report": report })))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyQuery {
    category: Option<String>,
    scope: Option<String>,
}

#[derive(Debug, Serialize)]
struct PolicyList {
    policies: Vec<Policy>,
}

async fn query_policies(
    State(state): State<AppState>,
    query: Result<Query<PolicyQuery>, QueryRejection>,
) -> ApiResult<Json<PolicyList>> {
    let Query(q) = query?;
    let category = q
        .category
        .filter(|c| !c.is_empty())
        .map(|c| c.parse::<PolicyCategory>().map_err(ApiError::bad_request))
        .transpose()?;
    let db = state.manager.store().snapshot();
    let policies = db
        .query(category, q.scope.as_deref().filter(|s| !s.is_empty()))
        .into_iter()
        .cloned()
        .collect();
    Ok(Json(PolicyList { policies }))
}

async fn metrics(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    let report = state.manager.metrics()?;
    Ok(Json(serde_json::to_value(report).expect("metrics serialize")))
}
