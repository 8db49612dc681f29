//! Structured policy records, their violation queues and the policy database.

mod database;
mod queue;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use database::{DatabaseError, PolicyDatabase, QueueCapacity, SCHEMA_VERSION};
pub use queue::TieredQueue;
pub use store::PolicyStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

impl RiskLevel {
    pub const ALL: [RiskLevel; 3] = [RiskLevel::Low, RiskLevel::Medium, RiskLevel::High];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskLevel::Low => "low",
            RiskLevel::Medium => "medium",
            RiskLevel::High => "high",
        }
    }
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(RiskLevel::Low),
            "medium" => Ok(RiskLevel::Medium),
            "high" => Ok(RiskLevel::High),
            other => Err(format!("unknown risk level `{other}`")),
        }
    }
}

/// Task-policy taxonomy used for evaluation scoping and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyCategory {
    Consent,
    Boundary,
    Execution,
    Injection,
    Other,
}

impl PolicyCategory {
    pub const ALL: [PolicyCategory; 5] = [
        PolicyCategory::Consent,
        PolicyCategory::Boundary,
        PolicyCategory::Execution,
        PolicyCategory::Injection,
        PolicyCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyCategory::Consent => "consent",
            PolicyCategory::Boundary => "boundary",
            PolicyCategory::Execution => "execution",
            PolicyCategory::Injection => "injection",
            PolicyCategory::Other => "other",
        }
    }
}

impl fmt::Display for PolicyCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyCategory::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown policy category `{}`", s.trim()))
    }
}

/// Where a policy statement came from: a document and a char offset range.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceSpan {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub id: String,
    pub category: PolicyCategory,
    pub scope: String,
    pub definition: String,
    pub constraints: Vec<String>,
    pub risk_level: RiskLevel,
    pub source: Vec<SourceSpan>,
    pub violation_queue: TieredQueue,
}

/// A recorded negative example attached to a policy.
///
/// `created_at` is stamped by the database when the reference is queued and
/// is zero before that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReference {
    pub policy_id: String,
    pub canonical_text: String,
    pub step_index: usize,
    pub task_goal: String,
    pub risk_level: RiskLevel,
    #[serde(default)]
    pub created_at: u64,
}
