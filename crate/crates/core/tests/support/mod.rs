#![allow(dead_code)]

pub mod oracle;

use policyguard_core::policy::{Policy, PolicyCategory, RiskLevel, SourceSpan, TieredQueue};
use serde_json::{json, Value};

pub fn policy(id: &str, category: PolicyCategory, risk: RiskLevel) -> Policy {
    Policy {
        id: id.into(),
        category,
        scope: "all sites".into(),
        definition: format!("Rule {id}: never act without the user's explicit permission."),
        constraints: vec![format!("{id} constraint")],
        risk_level: risk,
        source: vec![SourceSpan {
            doc_id: "handbook".into(),
            start: 0,
            end: 42,
        }],
        violation_queue: TieredQueue::new(1),
    }
}

pub fn clear() -> Value {
    json!({
        "policy_violation": false, "violated_policy_ids": [], "goal_drift": false,
        "threat_explanation": "", "deviation_explanation": "", "guidance": ""
    })
}

pub fn flag_policy(ids: &[&str], threat: &str) -> Value {
    json!({
        "policy_violation": true, "violated_policy_ids": ids, "goal_drift": false,
        "threat_explanation": threat, "deviation_explanation": "",
        "guidance": "Ask the user before continuing."
    })
}

pub fn flag_goal(deviation: &str) -> Value {
    json!({
        "policy_violation": false, "violated_policy_ids": [], "goal_drift": true,
        "threat_explanation": "", "deviation_explanation": deviation,
        "guidance": "Return to the task page."
    })
}
