use std::env;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatBackend, ChatRequest, TransportError};

fn default_api_key_env() -> String {
    "POLICYGUARD_API_KEY".into()
}

fn default_timeout() -> u64 {
    60
}

/// OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions resource.
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

pub struct RemoteBackend {
    endpoint: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl RemoteBackend {
    /// Reads the credential from the configured environment variable. A
    /// missing variable means requests go out without authorization.
    pub fn new(config: &RemoteConfig) -> Result<Self, TransportError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| TransportError::Failed(e.to_string()))?;
        let api_key = env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; sending unauthenticated requests", config.api_key_env);
        }
        Ok(RemoteBackend {
            endpoint: config.endpoint.clone(),
            api_key,
            http,
        })
    }
}

impl ChatBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let body = json!({
            "model": request.model_name,
            "temperature": request.temperature(),
            "messages": [
                { "role": "system", "content": request.system_prompt },
                { "role": "user", "content": request.user_payload },
            ],
            "response_format": { "type": "json_object" },
        });
        let mut call = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Failed(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TransportError::Failed(format!("endpoint returned {status}")));
        }
        let value: serde_json::Value = resp
            .json()
            .map_err(|e| TransportError::Failed(format!("unreadable response body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError::Failed("response has no choices[0].message.content".into()))
    }
}
