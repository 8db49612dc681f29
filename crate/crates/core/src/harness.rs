//! Batch replay of recorded trajectories.
//!
//! A suite file holds the trajectories, their ground truth, optional seed
//! policies and the scripted backend replies. Every fixture of a round is
//! evaluated against the database as it stood when the round began; the
//! violations collected during the round are applied at its end in task id
//! order, so results do not depend on execution order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{Strategy, VerdictStatus};
use crate::llm::{LlmClient, MockBackend, MockScript};
use crate::metrics::{compute_metrics, format_rows, MetricsReport, ReportFormat, ReportRow, TaskRecord};
use crate::policy::{
    DatabaseError, Policy, PolicyCategory, PolicyDatabase, PolicyStore, RiskLevel, ViolationReference,
};
use crate::session::{GroundTruth, NewSession, SessionError, SessionManager};
use crate::update::{UpdateConfig, UpdateOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid suite: {0}")]
    Invalid(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Database(#[from] DatabaseError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureStep {
    pub thought: String,
    pub proposed_action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFixture {
    pub task_id: String,
    pub task_goal: String,
    #[serde(default)]
    pub policy_scope: Option<PolicyCategory>,
    pub steps: Vec<FixtureStep>,
    pub ground_truth: GroundTruth,
}

/// Policy definition inside a suite, inserted with an empty queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedPolicy {
    pub id: String,
    pub category: PolicyCategory,
    #[serde(default)]
    pub scope: String,
    pub definition: String,
    #[serde(default)]
    pub constraints: Vec<String>,
    pub risk_level: RiskLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub suite: String,
    #[serde(default)]
    pub policies: Vec<SeedPolicy>,
    pub fixtures: Vec<TrajectoryFixture>,
    #[serde(default)]
    pub mock_script: Option<MockScript>,
}

impl Suite {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, HarnessError> {
        let suite: Suite = serde_json::from_str(text).map_err(|e| HarnessError::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.fixtures.is_empty() {
            return Err(HarnessError::Invalid(format!("suite `{}` has no fixtures", self.suite)));
        }
        let mut seen = BTreeSet::new();
        for f in &self.fixtures {
            if !seen.insert(f.task_id.as_str()) {
                return Err(HarnessError::Invalid(format!("duplicate task_id `{}`", f.task_id)));
            }
            if f.steps.is_empty() {
                return Err(HarnessError::Invalid(format!("fixture `{}` has no steps", f.task_id)));
            }
        }
        let mut ids = BTreeSet::new();
        for p in &self.policies {
            if !ids.insert(p.id.as_str()) {
                return Err(HarnessError::Invalid(format!("duplicate seed policy `{}`", p.id)));
            }
        }
        Ok(())
    }

    /// Client over the embedded script.
    pub fn mock_client(&self) -> Result<LlmClient, HarnessError> {
        let script = self
            .mock_script
            .clone()
            .ok_or_else(|| HarnessError::Invalid(format!("suite `{}` embeds no mock_script", self.suite)))?;
        let backend = MockBackend::new(script).map_err(|e| HarnessError::Invalid(e.to_string()))?;
        Ok(LlmClient::scripted(Arc::new(backend)))
    }

    fn sorted_fixtures(&self) -> Vec<&TrajectoryFixture> {
        let mut v: Vec<_> = self.fixtures.iter().collect();
        v.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        v
    }
}

/// Inserts seed policies the database does not hold yet.
pub fn seed_policies(store: &PolicyStore, suite: &Suite) -> Result<usize, HarnessError> {
    let db = store.snapshot();
    let missing: Vec<_> = suite.policies.iter().filter(|p| !db.contains(&p.id)).collect();
    if missing.is_empty() {
        return Ok(0);
    }
    store.write(|db| {
        for p in &missing {
            db.insert_policy(Policy {
                id: p.id.clone(),
                category: p.category,
                scope: p.scope.clone(),
                definition: p.definition.clone(),
                constraints: p.constraints.clone(),
                risk_level: p.risk_level,
                source: Vec::new(),
                violation_queue: db.empty_queue(p.risk_level),
            })?;
        }
        Ok::<_, DatabaseError>(())
    })?;
    Ok(missing.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextLine {
    pub policy_id: String,
    pub created_at: u64,
    pub canonical_text: String,
}

/// One line of the verdict log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictLogEntry {
    pub round: usize,
    pub strategy: Strategy,
    pub task_id: String,
    pub step_index: usize,
    pub status: VerdictStatus,
    pub policy_flag: bool,
    pub goal_flag: bool,
    pub violated_policy_ids: Vec<String>,
    pub guidance: bool,
    pub context_violations: Vec<ContextLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskUpdate {
    pub task_id: String,
    pub outcome: UpdateOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub strategy: Strategy,
    pub metrics: MetricsReport,
    pub records: Vec<TaskRecord>,
    pub updates: Vec<TaskUpdate>,
    /// Queue length per policy after the round's updates.
    pub queue_lengths: BTreeMap<String, usize>,
    pub log: Vec<VerdictLogEntry>,
    /// Broken invariants; empty on a healthy run.
    pub invariant_failures: Vec<String>,
}

impl RoundReport {
    pub fn inserted(&self) -> usize {
        self.updates.iter().filter(|u| u.outcome.inserted).count()
    }
}

fn queues(db: &PolicyDatabase) -> BTreeMap<String, Vec<ViolationReference>> {
    db.policies()
        .map(|p| (p.id.clone(), p.violation_queue.iter().cloned().collect()))
        .collect()
}

/// Each queue after a round must be a suffix of the queue before it followed
/// only by references stamped during the round.
fn check_queue_evolution(
    before: &BTreeMap<String, Vec<ViolationReference>>,
    before_seq: u64,
    after: &PolicyDatabase,
    failures: &mut Vec<String>,
) {
    for p in after.policies() {
        let now: Vec<_> = p.violation_queue.iter().collect();
        let old = before.get(&p.id).map(Vec::as_slice).unwrap_or(&[]);
        let kept = now.iter().take_while(|v| v.created_at < before_seq).count();
        let ok_prefix = kept <= old.len() && now[..kept].iter().zip(&old[old.len() - kept..]).all(|(a, b)| *a == b);
        let ok_new = now[kept..].iter().all(|v| v.created_at >= before_seq);
        if !(ok_prefix && ok_new) {
            failures.push(format!(
                "queue of `{}` is not an eviction evolution of the previous round",
                p.id
            ));
        }
    }
}

/// Runs every fixture once under `strategy`, then applies the collected
/// violations in task id order.
pub fn run_round(
    suite: &Suite,
    store: &Arc<PolicyStore>,
    client: &LlmClient,
    strategy: Strategy,
    update: &UpdateConfig,
    round: usize,
) -> Result<RoundReport, HarnessError> {
    let start = store.snapshot();
    let before = queues(&start);
    let manager = SessionManager::new(store.clone(), client.clone(), *update).with_default_strategy(strategy);
    let mut log = Vec::new();
    let mut records = Vec::new();
    let mut pending: Vec<(String, Vec<ViolationReference>)> = Vec::new();
    let mut failures = Vec::new();

    for f in suite.sorted_fixtures() {
        let id = manager.create_session(NewSession {
            task_goal: f.task_goal.clone(),
            policy_scope: f.policy_scope,
            strategy: None,
            label: Some(f.task_id.clone()),
        })?;
        for step in &f.steps {
            let out = manager.submit_step(&id, &step.thought, &step.proposed_action)?;
            let v = &out.verdict;
            if let Err(e) = v.check_contract() {
                failures.push(format!("{}: {e}", f.task_id));
            }
            log.push(VerdictLogEntry {
                round,
                strategy,
                task_id: f.task_id.clone(),
                step_index: v.step_index,
                status: v.status,
                policy_flag: v.policy_flag,
                goal_flag: v.goal_flag,
                violated_policy_ids: v.violated_policy_ids.clone(),
                guidance: v.guidance.is_some(),
                context_violations: out
                    .context_violations
                    .iter()
                    .map(|c| ContextLine {
                        policy_id: c.policy_id.clone(),
                        created_at: c.created_at,
                        canonical_text: c.canonical_text.clone(),
                    })
                    .collect(),
                error: v.error.clone(),
            });
        }
        let (refs, record) = manager.close_deferred(&id, Some(f.ground_truth.clone()))?;
        records.extend(record);
        pending.push((f.task_id.clone(), refs));
    }

    if store.snapshot().next_sequence() != start.next_sequence() {
        failures.push("database changed while the round was evaluating".into());
    }
    let mut updates = Vec::new();
    for (task_id, refs) in &pending {
        for outcome in manager.apply(refs)? {
            updates.push(TaskUpdate {
                task_id: task_id.clone(),
                outcome,
            });
        }
    }
    let end = store.snapshot();
    if let Err(e) = end.validate() {
        failures.push(e.to_string());
    }
    check_queue_evolution(&before, start.next_sequence(), &end, &mut failures);
    let metrics = compute_metrics(&records).map_err(SessionError::from)?;
    Ok(RoundReport {
        round,
        strategy,
        metrics,
        records,
        updates,
        queue_lengths: end
            .policies()
            .map(|p| (p.id.clone(), p.violation_queue.len()))
            .collect(),
        log,
        invariant_failures: failures,
    })
}

/// One round under one strategy.
pub fn replay(
    suite: &Suite,
    store: &Arc<PolicyStore>,
    client: &LlmClient,
    strategy: Strategy,
    update: &UpdateConfig,
) -> Result<RoundReport, HarnessError> {
    seed_policies(store, suite)?;
    run_round(suite, store, client, strategy, update, 1)
}

/// `rounds` consecutive rounds over one evolving database. The client is
/// shared, so scripted reply lists advance from round to round.
pub fn multi_round(
    suite: &Suite,
    store: &Arc<PolicyStore>,
    client: &LlmClient,
    strategy: Strategy,
    update: &UpdateConfig,
    rounds: usize,
) -> Result<Vec<RoundReport>, HarnessError> {
    if rounds == 0 {
        return Err(HarnessError::Invalid("rounds must be at least 1".into()));
    }
    seed_policies(store, suite)?;
    (1..=rounds)
        .map(|r| run_round(suite, store, client, strategy, update, r))
        .collect()
}

/// One round per strategy, each on its own copy of the starting database
/// and with a fresh client from `make_client`.
pub fn compare(
    suite: &Suite,
    start: &PolicyDatabase,
    make_client: &dyn Fn() -> Result<LlmClient, HarnessError>,
    strategies: &[Strategy],
    update: &UpdateConfig,
) -> Result<Vec<RoundReport>, HarnessError> {
    strategies
        .iter()
        .map(|&s| {
            let store = Arc::new(PolicyStore::in_memory(start.clone()));
            seed_policies(&store, suite)?;
            run_round(suite, &store, &make_client()?, s, update, 1)
        })
        .collect()
}

/// JSON lines, one per evaluated step.
pub fn verdict_log_jsonl<'a>(reports: impl IntoIterator<Item = &'a RoundReport>) -> String {
    let mut out = String::new();
    for r in reports {
        for e in &r.log {
            let _ = writeln!(out, "{}", serde_json::to_string(e).expect("log entry serializes"));
        }
    }
    out
}

/// Metrics rows labelled by round or strategy.
pub fn report_rows(reports: &[RoundReport], by_strategy: bool) -> Vec<ReportRow> {
    reports
        .iter()
        .map(|r| ReportRow {
            label: if by_strategy {
                r.strategy.as_str().to_string()
            } else {
                format!("round {}", r.round)
            },
            report: r.metrics.clone(),
        })
        .collect()
}

pub fn render(reports: &[RoundReport], by_strategy: bool, format: ReportFormat) -> String {
    let header = if by_strategy { "Strategy" } else { "Round" };
    format_rows(header, &report_rows(reports, by_strategy), format)
}
