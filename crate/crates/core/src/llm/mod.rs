//! Chat-completion backends.
//!
//! Every model call goes through [`LlmClient::complete`], which is the only
//! place raw model text is looked at: it parses the reply against the
//! requested payload schema, re-asks once with a repair instruction on a
//! parse or validation failure, and retries transport errors with backoff.

mod mock;
mod payload;
mod remote;

use std::fmt;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{MockBackend, MockReply, MockRule, MockScript, MockScriptError};
pub use payload::{DedupJudgment, ExtractedPolicy, ExtractionPayload, Payload, VerdictPayload};
pub use remote::{RemoteBackend, RemoteConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    PolicyAgent,
    UtilityAgent,
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentRole::PolicyAgent => "policy_agent",
            AgentRole::UtilityAgent => "utility_agent",
        })
    }
}

/// Named response schema a request expects the model to follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSchema {
    PolicyExtraction,
    DedupJudgment,
    StepVerdict,
}

impl fmt::Display for ResponseSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResponseSchema::PolicyExtraction => "policy_extraction",
            ResponseSchema::DedupJudgment => "dedup_judgment",
            ResponseSchema::StepVerdict => "step_verdict",
        })
    }
}

/// Routing metadata a scripted backend can match on. Remote backends ignore it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestContext {
    /// Session label (the task id under replay).
    pub session: Option<String>,
    pub step_index: Option<usize>,
    /// Indices of the reasoning steps included in the evaluation window.
    pub window: Vec<usize>,
    pub repair: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub role: AgentRole,
    pub model_name: String,
    pub system_prompt: String,
    pub user_payload: String,
    pub response_schema: ResponseSchema,
    temperature: f64,
    pub context: RequestContext,
}

impl ChatRequest {
    pub fn new(
        role: AgentRole,
        model_name: impl Into<String>,
        system_prompt: impl Into<String>,
        user_payload: impl Into<String>,
        response_schema: ResponseSchema,
    ) -> Self {
        ChatRequest {
            role,
            model_name: model_name.into(),
            system_prompt: system_prompt.into(),
            user_payload: user_payload.into(),
            response_schema,
            temperature: 0.0,
            context: RequestContext::default(),
        }
    }

    pub fn with_context(mut self, context: RequestContext) -> Self {
        self.context = context;
        self
    }

    /// Always zero.
    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransportError {
    #[error("transport failure: {0}")]
    Failed(String),
    #[error("request timed out")]
    Timeout,
}

/// A chat-completion endpoint returning the assistant message text.
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("reply does not match the {schema} schema: {message}")]
    Schema { schema: ResponseSchema, message: String },
}

/// Retry and model-selection settings shared by all calls of one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CallPolicy {
    /// Extra transport attempts after the first.
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for CallPolicy {
    fn default() -> Self {
        CallPolicy {
            max_retries: 2,
            backoff_ms: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelNames {
    pub policy_agent: String,
    pub utility_agent: String,
}

impl Default for ModelNames {
    fn default() -> Self {
        ModelNames {
            policy_agent: "gpt-4o".into(),
            utility_agent: "qwen-max-2025-01-25".into(),
        }
    }
}

impl ModelNames {
    pub fn for_role(&self, role: AgentRole) -> &str {
        match role {
            AgentRole::PolicyAgent => &self.policy_agent,
            AgentRole::UtilityAgent => &self.utility_agent,
        }
    }
}

/// A backend plus model names and call policy.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    models: ModelNames,
    policy: CallPolicy,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient")
            .field("backend", &self.backend.name())
            .field("models", &self.models)
            .field("policy", &self.policy)
            .finish()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>, models: ModelNames, policy: CallPolicy) -> Self {
        LlmClient {
            backend,
            models,
            policy,
        }
    }

    /// Client over `backend` with default models and no backoff delay.
    pub fn scripted(backend: Arc<dyn ChatBackend>) -> Self {
        LlmClient::new(
            backend,
            ModelNames::default(),
            CallPolicy {
                max_retries: 0,
                backoff_ms: 0,
            },
        )
    }

    pub fn models(&self) -> &ModelNames {
        &self.models
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Builds a request for `role` using the configured model name.
    pub fn request(
        &self,
        role: AgentRole,
        system_prompt: impl Into<String>,
        user_payload: impl Into<String>,
        schema: ResponseSchema,
    ) -> ChatRequest {
        ChatRequest::new(role, self.models.for_role(role), system_prompt, user_payload, schema)
    }

    pub fn complete<P: Payload>(&self, request: &ChatRequest) -> Result<P, BackendError> {
        self.complete_checked(request, |_: &P| Ok(()))
    }

    /// Like [`complete`](Self::complete) with an extra caller-side check
    /// that also triggers the repair round when it fails.
    pub fn complete_checked<P: Payload>(
        &self,
        request: &ChatRequest,
        check: impl Fn(&P) -> Result<(), String>,
    ) -> Result<P, BackendError> {
        let schema = request.response_schema;
        let first = self.send_with_retries(request)?;
        let err = match parse_reply::<P>(&first).and_then(|p| check(&p).map(|_| p)) {
            Ok(p) => return Ok(p),
            Err(e) => e,
        };
        log::debug!("{} reply failed {schema} schema, re-asking: {err}", self.backend.name());
        let mut repair = request.clone();
        repair.user_payload = format!(
            "{}\n\nYour previous reply could not be used: {err}\n\
             Reply again with only a JSON object that follows the {schema} schema.",
            request.user_payload
        );
        repair.context.repair = true;
        let second = self.send_with_retries(&repair)?;
        parse_reply::<P>(&second)
            .and_then(|p| check(&p).map(|_| p))
            .map_err(|message| BackendError::Schema { schema, message })
    }

    fn send_with_retries(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let attempts = self.policy.max_retries + 1;
        let mut last = TransportError::Failed("no attempt made".into());
        for attempt in 1..=attempts {
            match self.backend.send(request) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("{} attempt {attempt}/{attempts} failed: {e}", self.backend.name());
                    last = e;
                }
            }
            if attempt < attempts && self.policy.backoff_ms > 0 {
                thread::sleep(Duration::from_millis(self.policy.backoff_ms << (attempt - 1)));
            }
        }
        Err(match last {
            TransportError::Timeout => BackendError::Timeout { attempts },
            TransportError::Failed(message) => BackendError::Transport { attempts, message },
        })
    }
}

/// Pulls a JSON object out of a model reply, tolerating a Markdown code fence.
fn parse_reply<P: Payload>(text: &str) -> Result<P, String> {
    let mut body = text.trim();
    if let Some(rest) = body.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphabetic());
        body = rest.strip_suffix("```").unwrap_or(rest).trim();
    }
    let payload: P = parse_json(body)?;
    payload.validate()?;
    Ok(payload)
}

fn parse_json<T: DeserializeOwned>(body: &str) -> Result<T, String> {
    serde_json::from_str(body).map_err(|e| e.to_string())
}

/// Wraps a backend and records every request it sees.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>) -> Self {
        RecordingBackend {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().expect("recording lock").clone()
    }

    pub fn clear(&self) {
        self.seen.lock().expect("recording lock").clear();
    }
}

impl ChatBackend for RecordingBackend {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.seen.lock().expect("recording lock").push(request.clone());
        self.inner.send(request)
    }
}
