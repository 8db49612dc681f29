use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::policy::{PolicyCategory, RiskLevel};

/// A structured model reply.
pub trait Payload: DeserializeOwned {
    /// Self-consistency checks beyond what deserialization enforces.
    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

/// Combined output of the policy-compliance and goal-alignment evaluators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictPayload {
    pub policy_violation: bool,
    pub violated_policy_ids: Vec<String>,
    pub goal_drift: bool,
    #[serde(default)]
    pub threat_explanation: String,
    #[serde(default)]
    pub deviation_explanation: String,
    #[serde(default)]
    pub guidance: String,
}

impl VerdictPayload {
    pub fn all_clear() -> Self {
        VerdictPayload {
            policy_violation: false,
            violated_policy_ids: Vec::new(),
            goal_drift: false,
            threat_explanation: String::new(),
            deviation_explanation: String::new(),
            guidance: String::new(),
        }
    }
}

impl Payload for VerdictPayload {
    fn validate(&self) -> Result<(), String> {
        if self.policy_violation == self.violated_policy_ids.is_empty() {
            return Err(format!(
                "policy_violation is {} but violated_policy_ids has {} entries",
                self.policy_violation,
                self.violated_policy_ids.len()
            ));
        }
        if self.violated_policy_ids.iter().any(|id| id.trim().is_empty()) {
            return Err("violated_policy_ids contains an empty id".into());
        }
        if self.policy_violation && self.threat_explanation.trim().is_empty() {
            return Err("a policy violation needs a threat_explanation".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractedPolicy {
    /// Verbatim excerpt of the source text the statement was derived from.
    #[serde(default)]
    pub raw_statement: String,
    pub statement: String,
    pub category: PolicyCategory,
    pub risk_level: RiskLevel,
    #[serde(default)]
    pub scope: String,
    #[serde(default)]
    pub constraints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionPayload {
    pub policies: Vec<ExtractedPolicy>,
}

impl Payload for ExtractionPayload {}

/// Model confirmation for a pair of near-duplicate policy statements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DedupJudgment {
    pub merge: bool,
    #[serde(default)]
    pub reason: String,
}

impl Payload for DedupJudgment {}
