//! Runtime configuration, read from TOML.
//!
//! ```toml
//! listen = "127.0.0.1:8088"
//! db_path = "policies.json"
//!
//! [backend]
//! kind = "mock"
//! script = "mock_script.json"
//!
//! [evaluation]
//! strategy = "second_order_markov"
//!
//! [update]
//! theta = 0.85
//! flush = "on_close"
//! ```
//!
//! Relative paths resolve against the directory of the config file.
//! Credentials never appear here; the remote backend names the environment
//! variable that holds its token.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enhancement::{OrganizationContext, DEFAULT_DEDUP_THRESHOLD};
use crate::evaluation::Strategy;
use crate::llm::{
    CallPolicy, ChatBackend, LlmClient, MockBackend, MockScript, ModelNames, RemoteBackend, RemoteConfig,
};
use crate::policy::QueueCapacity;
use crate::update::{DedupScope, UpdateConfig, DEFAULT_THETA};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("backend setup failed: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Mock { script: PathBuf },
    Remote(RemoteConfig),
}

/// When detected violations reach the update pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlushMode {
    /// Batched per session at close or on an explicit flush call.
    #[default]
    OnClose,
    /// Right after the step that produced them.
    Immediate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Must be 0; present so a config cannot silently assume otherwise.
    pub temperature: f64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        let p = CallPolicy::default();
        LlmSettings {
            max_retries: p.max_retries,
            backoff_ms: p.backoff_ms,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateSettings {
    pub theta: f64,
    pub dedup_scope: DedupScope,
    pub flush: FlushMode,
}

impl Default for UpdateSettings {
    fn default() -> Self {
        UpdateSettings {
            theta: DEFAULT_THETA,
            dedup_scope: DedupScope::default(),
            flush: FlushMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancementSettings {
    pub dedup_threshold: f64,
}

impl Default for EnhancementSettings {
    fn default() -> Self {
        EnhancementSettings {
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub listen: String,
    pub db_path: PathBuf,
    pub backend: BackendConfig,
    pub models: ModelNames,
    pub llm: LlmSettings,
    pub evaluation: EvaluationSettings,
    pub update: UpdateSettings,
    pub queue_capacity: QueueCapacity,
    pub enhancement: EnhancementSettings,
    pub organization: OrganizationContext,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            listen: "127.0.0.1:8088".into(),
            db_path: "policies.json".into(),
            backend: BackendConfig::Mock {
                script: "mock_script.json".into(),
            },
            models: ModelNames::default(),
            llm: LlmSettings::default(),
            evaluation: EvaluationSettings::default(),
            update: UpdateSettings::default(),
            queue_capacity: QueueCapacity::default(),
            enhancement: EnhancementSettings::default(),
            organization: OrganizationContext::default(),
        }
    }
}

impl Config {
    /// Parses, resolves relative paths against `base_dir` and validates.
    pub fn from_toml_str(text: &str, origin: &Path, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.db_path = resolve(base_dir, &cfg.db_path);
        if let BackendConfig::Mock { script } = &mut cfg.backend {
            *script = resolve(base_dir, script);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, path, base)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.llm.temperature != 0.0 {
            return Err(ConfigError::Invalid(format!(
                "llm.temperature must be 0, got {}",
                self.llm.temperature
            )));
        }
        let t = self.enhancement.dedup_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "enhancement.dedup_threshold {t} outside (0, 1]"
            )));
        }
        self.update_config()?;
        Ok(())
    }

    pub fn update_config(&self) -> Result<UpdateConfig, ConfigError> {
        UpdateConfig::new(self.update.theta, self.queue_capacity, self.update.dedup_scope)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn call_policy(&self) -> CallPolicy {
        CallPolicy {
            max_retries: self.llm.max_retries,
            backoff_ms: self.llm.backoff_ms,
        }
    }

    /// Builds the configured backend. Must not run inside an async runtime
    /// because the remote backend uses a blocking HTTP client.
    pub fn build_backend(&self) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        Ok(match &self.backend {
            BackendConfig::Mock { script } => {
                let script = MockScript::load(script).map_err(|e| ConfigError::Backend(e.to_string()))?;
                Arc::new(MockBackend::new(script).map_err(|e| ConfigError::Backend(e.to_string()))?)
            }
            BackendConfig::Remote(rc) => {
                Arc::new(RemoteBackend::new(rc).map_err(|e| ConfigError::Backend(e.to_string()))?)
            }
        })
    }

    pub fn build_client(&self) -> Result<LlmClient, ConfigError> {
        Ok(LlmClient::new(
            self.build_backend()?,
            self.models.clone(),
            self.call_policy(),
        ))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, ConfigError> {
        Config::from_toml_str(text, Path::new("test.toml"), Path::new("/etc/guard"))
    }

    #[test]
    fn defaults_fill_everything() {
        let c = parse("").unwrap();
        assert_eq!(c.queue_capacity, QueueCapacity::default());
        assert_eq!(c.update.theta, 0.85);
        assert_eq!(c.evaluation.strategy, Strategy::SecondOrderMarkov);
        assert_eq!(c.db_path, Path::new("/etc/guard/policies.json"));
    }

    #[test]
    fn remote_backend_section() {
        let c = parse(
            "[backend]\nkind = \"remote\"\nendpoint = \"http://llm:8000/v1/chat/completions\"\n\
             [evaluation]\nstrategy = \"current_step\"\n[queue_capacity]\nhigh = 12\n",
        )
        .unwrap();
        assert!(matches!(c.backend, BackendConfig::Remote(ref r) if r.timeout_secs == 60));
        assert_eq!(c.evaluation.strategy, Strategy::CurrentStep);
        assert_eq!(c.queue_capacity.high, 12);
        assert_eq!(c.queue_capacity.low, 5);
    }

    #[test]
    fn temperature_locked() {
        let err = parse("[llm]\ntemperature = 0.7\n").unwrap_err();
        assert!(err.to_string().contains("temperature"));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(parse("[update]\ntheta = 0\n").is_err());
        assert!(parse("[queue_capacity]\nlow = 0\n").is_err());
        assert!(parse("unknown_key = 1\n").is_err());
        assert!(parse("[evaluation]\nstrategy = \"sideways\"\n").is_err());
    }
}
