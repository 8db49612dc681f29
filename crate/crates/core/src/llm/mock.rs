//! Deterministic scripted backend.
//!
//! A script is an ordered list of rules. The first rule whose matcher
//! accepts a request answers it with the next reply from its list; once the
//! list is exhausted the last reply repeats. Cursors are kept per
//! `(rule, session)` so concurrent sessions do not disturb each other.
//!
//! ```json
//! { "rules": [
//!     { "role": "utility_agent", "task": "t2", "step": 3,
//!       "responses": [ { "policy_violation": true, "...": "..." } ] },
//!     { "role": "utility_agent", "window_contains": 4, "responses": [ { "raw": "not json" } ] },
//!     { "role": "utility_agent", "responses": [ { "error": "upstream unavailable" } ] }
//! ] }
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AgentRole, ChatBackend, ChatRequest, ResponseSchema, TransportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    /// Reply with this exact text (used to script malformed output).
    Raw { raw: String },
    /// Fail the call at the transport level.
    Error { error: String },
    /// Reply with this JSON document.
    Json(serde_json::Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<AgentRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<ResponseSchema>,
    /// Session label, i.e. the fixture task id under replay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_contains: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_contains: Option<String>,
    pub responses: Vec<MockReply>,
}

impl MockRule {
    fn matches(&self, req: &ChatRequest) -> bool {
        let ctx = &req.context;
        self.role.is_none_or(|r| r == req.role)
            && self.schema.is_none_or(|s| s == req.response_schema)
            && self.task.as_deref().is_none_or(|t| ctx.session.as_deref() == Some(t))
            && self.step.is_none_or(|s| ctx.step_index == Some(s))
            && self.window_contains.is_none_or(|k| ctx.window.contains(&k))
            && self
                .payload_contains
                .as_deref()
                .is_none_or(|needle| req.user_payload.contains(needle))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
}

#[derive(Debug, Error)]
pub enum MockScriptError {
    #[error("cannot read mock script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("mock rule {0} has no responses")]
    EmptyRule(usize),
}

impl MockScript {
    pub fn validate(&self) -> Result<(), MockScriptError> {
        match self.rules.iter().position(|r| r.responses.is_empty()) {
            Some(i) => Err(MockScriptError::EmptyRule(i)),
            None => Ok(()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, MockScriptError> {
        let label = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| MockScriptError::Io {
            path: label.clone(),
            source,
        })?;
        let script: MockScript = serde_json::from_str(&text).map_err(|e| MockScriptError::Parse {
            path: label,
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        script.validate()?;
        Ok(script)
    }
}

#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    cursors: Mutex<HashMap<(usize, Option<String>), usize>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<Self, MockScriptError> {
        script.validate()?;
        Ok(MockBackend {
            script,
            cursors: Mutex::new(HashMap::new()),
        })
    }

    /// A backend that answers every request with `reply`.
    pub fn always(reply: MockReply) -> Self {
        MockBackend::new(MockScript {
            rules: vec![MockRule {
                role: None,
                schema: None,
                task: None,
                step: None,
                window_contains: None,
                payload_contains: None,
                responses: vec![reply],
            }],
        })
        .expect("non-empty rule")
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl ChatBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let Some((idx, rule)) = self.script.rules.iter().enumerate().find(|(_, r)| r.matches(request)) else {
            return Err(TransportError::Failed(format!(
                "no scripted response for {} request (session {:?}, step {:?})",
                request.role, request.context.session, request.context.step_index
            )));
        };
        let pos = {
            let mut cursors = self.cursors.lock().expect("mock cursor lock");
            let cursor = cursors.entry((idx, request.context.session.clone())).or_insert(0);
            let pos = (*cursor).min(rule.responses.len() - 1);
            *cursor += 1;
            pos
        };
        match &rule.responses[pos] {
            MockReply::Raw { raw } => Ok(raw.clone()),
            MockReply::Error { error } => Err(TransportError::Failed(error.clone())),
            MockReply::Json(value) => Ok(value.to_string()),
        }
    }
}
