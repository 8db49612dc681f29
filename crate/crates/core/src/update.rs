//! Feedback-driven policy update: similarity filtering against queued
//! references, then bounded FIFO insertion into the policy's tiered queue.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{PolicyDatabase, QueueCapacity, ViolationReference};
use crate::similarity::{text_similarity, SimilarityScore};

pub const DEFAULT_THETA: f64 = 0.85;

#[derive(Debug, Error, PartialEq)]
pub enum UpdateError {
    #[error("similarity threshold must lie in (0, 1], got {0}")]
    Theta(f64),
    #[error("invalid capacity: {0}")]
    Capacity(String),
    #[error("update configured for capacities {config:?} but database uses {database:?}")]
    CapacityMismatch {
        config: QueueCapacity,
        database: QueueCapacity,
    },
}

/// Which queued references a new violation is compared against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupScope {
    /// Every reference queued under a policy of the same risk tier and category.
    #[default]
    TierAndCategory,
    /// Only the target policy's own queue.
    Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateConfig {
    theta: f64,
    capacity: QueueCapacity,
    #[serde(default)]
    scope: DedupScope,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            theta: DEFAULT_THETA,
            capacity: QueueCapacity::default(),
            scope: DedupScope::default(),
        }
    }
}

impl UpdateConfig {
    pub fn new(theta: f64, capacity: QueueCapacity, scope: DedupScope) -> Result<Self, UpdateError> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(UpdateError::Theta(theta));
        }
        capacity.validate().map_err(UpdateError::Capacity)?;
        Ok(UpdateConfig { theta, capacity, scope })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn capacity(&self) -> QueueCapacity {
        self.capacity
    }

    pub fn scope(&self) -> DedupScope {
        self.scope
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateOf {
    pub policy_id: String,
    pub created_at: u64,
    pub similarity: f64,
}

/// What happened to one submitted violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub policy_id: String,
    pub inserted: bool,
    /// Sequence number stamped on the inserted reference.
    pub created_at: Option<u64>,
    pub evicted: Option<ViolationReference>,
    pub duplicate_of: Option<DuplicateOf>,
    pub error: Option<String>,
}

impl UpdateOutcome {
    fn failed(policy_id: &str, reason: String) -> Self {
        UpdateOutcome {
            policy_id: policy_id.to_string(),
            inserted: false,
            created_at: None,
            evicted: None,
            duplicate_of: None,
            error: Some(reason),
        }
    }
}

/// First (oldest) entry of `scope` whose similarity to `v` reaches `theta`.
///
/// `scope` must be ordered oldest first.
pub fn dedup_scan<'a>(
    scope: &[&'a ViolationReference],
    v: &ViolationReference,
    theta: f64,
) -> Option<(&'a ViolationReference, SimilarityScore)> {
    scope.iter().find_map(|u| {
        let score = text_similarity(&v.canonical_text, &u.canonical_text);
        (score.value() >= theta).then_some((*u, score))
    })
}

/// Queued references `v` is compared against, oldest first.
fn comparison_scope<'a>(db: &'a PolicyDatabase, policy_id: &str, scope: DedupScope) -> Vec<&'a ViolationReference> {
    let target = db.get(policy_id).expect("caller checked policy exists");
    match scope {
        DedupScope::Policy => target.violation_queue.iter().collect(),
        DedupScope::TierAndCategory => {
            let mut refs: Vec<_> = db
                .policies()
                .filter(|p| p.risk_level == target.risk_level && p.category == target.category)
                .flat_map(|p| p.violation_queue.iter())
                .collect();
            refs.sort_by_key(|v| v.created_at);
            refs
        }
    }
}

/// Runs each violation through the filter and its policy's bounded queue, in
/// the order given. Returns one outcome per input.
///
/// The risk tier is taken from the target policy. A violation naming an
/// unknown policy or carrying empty text yields an error outcome and the
/// remaining items are still processed.
pub fn apply_update(
    db: &mut PolicyDatabase,
    violations: &[ViolationReference],
    cfg: &UpdateConfig,
) -> Result<Vec<UpdateOutcome>, UpdateError> {
    if db.queue_capacity() != cfg.capacity {
        return Err(UpdateError::CapacityMismatch {
            config: cfg.capacity,
            database: db.queue_capacity(),
        });
    }
    let mut outcomes = Vec::with_capacity(violations.len());
    for v in violations {
        let Some(policy) = db.get(&v.policy_id) else {
            outcomes.push(UpdateOutcome::failed(
                &v.policy_id,
                format!("unknown policy `{}`", v.policy_id),
            ));
            continue;
        };
        if v.canonical_text.trim().is_empty() {
            outcomes.push(UpdateOutcome::failed(&v.policy_id, "empty canonical_text".into()));
            continue;
        }
        let risk_level = policy.risk_level;

        let scope = comparison_scope(db, &v.policy_id, cfg.scope);
        if let Some((dup, score)) = dedup_scan(&scope, v, cfg.theta) {
            outcomes.push(UpdateOutcome {
                policy_id: v.policy_id.clone(),
                inserted: false,
                created_at: None,
                evicted: None,
                duplicate_of: Some(DuplicateOf {
                    policy_id: dup.policy_id.clone(),
                    created_at: dup.created_at,
                    similarity: score.value(),
                }),
                error: None,
            });
            continue;
        }

        let seq = db.take_sequence();
        let mut queued = v.clone();
        queued.risk_level = risk_level;
        queued.created_at = seq;
        let policy = db.get_mut(&v.policy_id).expect("checked above");
        let evicted = policy.violation_queue.push_evicting(queued);
        outcomes.push(UpdateOutcome {
            policy_id: v.policy_id.clone(),
            inserted: true,
            created_at: Some(seq),
            evicted,
            duplicate_of: None,
            error: None,
        });
    }
    Ok(outcomes)
}
