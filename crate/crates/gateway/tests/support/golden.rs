//! Golden request/response runner shared with the workspace acceptance suite.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request};
use http_body_util::BodyExt;
use policyguard_core::llm::{LlmClient, MockBackend, MockScript};
use policyguard_core::policy::{Policy, PolicyCategory, PolicyDatabase, PolicyStore, QueueCapacity, RiskLevel};
use policyguard_core::session::SessionManager;
use policyguard_core::update::UpdateConfig;
use policyguard_gateway::{router, AppState};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower::ServiceExt;

/// `file!()` is relative to the workspace root; every member sits two
/// levels below it.
pub fn golden_dir() -> PathBuf {
    let this = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(file!());
    this.parent().unwrap().parent().unwrap().join("golden")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exchange {
    pub name: String,
    pub method: String,
    pub path: String,
    /// JSON body, or a string sent verbatim.
    #[serde(default)]
    pub body: Value,
    pub status: u16,
    pub response: Value,
}

fn seed(db: &mut PolicyDatabase, id: &str, category: PolicyCategory, risk: RiskLevel, scope: &str, def: &str) {
    db.insert_policy(Policy {
        id: id.into(),
        category,
        scope: scope.into(),
        definition: def.into(),
        constraints: vec![],
        risk_level: risk,
        source: vec![],
        violation_queue: db.empty_queue(risk),
    })
    .unwrap();
}

pub fn app(script: Value) -> axum::Router {
    let mut db = PolicyDatabase::new(QueueCapacity::default());
    seed(
        &mut db,
        "consent-001",
        PolicyCategory::Consent,
        RiskLevel::High,
        "shopping and checkout",
        "Ask the user before placing an order.",
    );
    seed(
        &mut db,
        "boundary-001",
        PolicyCategory::Boundary,
        RiskLevel::Medium,
        "all sites",
        "Do not follow links to external domains.",
    );
    let script: MockScript = serde_json::from_value(script).unwrap();
    let client = LlmClient::scripted(Arc::new(MockBackend::new(script).unwrap()));
    let manager = SessionManager::new(Arc::new(PolicyStore::in_memory(db)), client, UpdateConfig::default());
    router(AppState::new(Arc::new(manager)))
}

pub fn main_script() -> Value {
    let clear = json!({"policy_violation": false, "violated_policy_ids": [], "goal_drift": false,
        "threat_explanation": "", "deviation_explanation": "", "guidance": ""});
    json!({ "rules": [
        { "role": "utility_agent", "step": 2, "responses": [{
            "policy_violation": true, "violated_policy_ids": ["consent-001"], "goal_drift": false,
            "threat_explanation": "The order is placed without asking the user.",
            "deviation_explanation": "", "guidance": "Show the order summary.\nWait for confirmation." }] },
        { "role": "utility_agent", "responses": [clear] },
        { "role": "policy_agent", "schema": "policy_extraction", "responses": [{ "policies": [
            { "raw_statement": "Never store card numbers.", "statement": "Never store payment card numbers.",
              "category": "boundary", "risk_level": "high", "scope": "checkout" },
            { "raw_statement": "Confirm deletions.", "statement": "Ask before deleting user content.",
              "category": "execution", "risk_level": "low" } ] }] }
    ]})
}

pub fn failing_script() -> Value {
    json!({ "rules": [ { "responses": [ { "error": "upstream 503" } ] } ] })
}

pub async fn send(app: &axum::Router, ex: &Exchange) -> (u16, Value) {
    let mut req = Request::builder().method(ex.method.as_str()).uri(&ex.path);
    let body = match &ex.body {
        Value::Null => Body::empty(),
        Value::String(raw) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(raw.clone())
        }
        v => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

/// Replays `file` from the golden directory against a fresh app. With
/// `UPDATE_GOLDEN` set, rewrites the expected responses instead.
pub async fn run_golden(file: &str, script: Value) -> Result<usize, String> {
    let path = golden_dir().join(file);
    let mut exchanges: Vec<Exchange> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let app = app(script);
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut failures = Vec::new();
    for ex in exchanges.iter_mut() {
        let (status, response) = send(&app, ex).await;
        if update {
            ex.status = status;
            ex.response = response;
        } else if (status, &response) != (ex.status, &ex.response) {
            failures.push(format!(
                "{}: expected {} {}\n got {} {}",
                ex.name, ex.status, ex.response, status, response
            ));
        }
    }
    if update {
        std::fs::write(&path, serde_json::to_string_pretty(&exchanges).unwrap() + "\n").unwrap();
    }
    if failures.is_empty() {
        Ok(exchanges.len())
    } else {
        Err(failures.join("\n"))
    }
}
