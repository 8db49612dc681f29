//! Evaluation sessions: one per web-agent task.
//!
//! Steps within a session are processed one at a time under the session's
//! own lock. Every step reads a database snapshot; the database is written
//! only when a session flushes its pending violations or a document is
//! ingested, both through the store's single writer.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::FlushMode;
use crate::enhancement::{self, EnhancementError, IngestReport, OrganizationContext, SourceDocument};
use crate::evaluation::{evaluate_step, EvaluationContext, EvaluationVerdict, ReasoningStep, Strategy};
use crate::llm::LlmClient;
use crate::metrics::{compute_metrics, EntryResult, MetricsError, MetricsReport, TaskRecord};
use crate::policy::{DatabaseError, PolicyCategory, PolicyStore, ViolationReference};
use crate::update::{apply_update, UpdateConfig, UpdateError, UpdateOutcome};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` is closed")]
    Closed(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Update(#[from] UpdateError),
    #[error(transparent)]
    Database(#[from] DatabaseError),
    #[error(transparent)]
    Enhancement(#[from] EnhancementError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Session {
    pub session_id: String,
    /// Routing key for scripted backends; the fixture task id under replay.
    pub label: Option<String>,
    pub task_goal: String,
    pub policy_scope: Option<PolicyCategory>,
    pub strategy: Strategy,
    pub history: Vec<ReasoningStep>,
    pub pending_violations: Vec<ViolationReference>,
    /// Every policy id flagged during the session, flushed or not.
    pub flagged_policies: BTreeSet<String>,
    pub status: SessionStatus,
}

impl Session {
    fn routing_key(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.session_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSession {
    pub task_goal: String,
    #[serde(default)]
    pub policy_scope: Option<PolicyCategory>,
    /// Strategy name; the configured default when absent.
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub label: Option<String>,
}

/// Result of one submitted step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutcome {
    pub session_id: String,
    pub history_len: usize,
    pub verdict: EvaluationVerdict,
    /// Queued references the evaluator was shown as negative examples.
    pub context_violations: Vec<ViolationReference>,
    /// Present in immediate flush mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flushed: Option<Vec<UpdateOutcome>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub completed: bool,
    #[serde(default)]
    pub entry_results: Vec<EntryResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CloseSummary {
    pub session_id: String,
    /// True when the session had been closed before this call.
    pub already_closed: bool,
    pub outcomes: Vec<UpdateOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_record: Option<TaskRecord>,
}

pub struct SessionManager {
    store: Arc<PolicyStore>,
    client: LlmClient,
    update: UpdateConfig,
    flush_mode: FlushMode,
    default_strategy: Strategy,
    organization: OrganizationContext,
    dedup_threshold: f64,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    records: Mutex<Vec<TaskRecord>>,
}

impl SessionManager {
    pub fn new(store: Arc<PolicyStore>, client: LlmClient, update: UpdateConfig) -> Self {
        SessionManager {
            store,
            client,
            update,
            flush_mode: FlushMode::OnClose,
            default_strategy: Strategy::default(),
            organization: OrganizationContext::default(),
            dedup_threshold: enhancement::DEFAULT_DEDUP_THRESHOLD,
            sessions: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn with_flush_mode(mut self, mode: FlushMode) -> Self {
        self.flush_mode = mode;
        self
    }

    pub fn with_default_strategy(mut self, strategy: Strategy) -> Self {
        self.default_strategy = strategy;
        self
    }

    pub fn with_ingestion(mut self, organization: OrganizationContext, dedup_threshold: f64) -> Self {
        self.organization = organization;
        self.dedup_threshold = dedup_threshold;
        self
    }

    pub fn store(&self) -> &Arc<PolicyStore> {
        &self.store
    }

    pub fn update_config(&self) -> &UpdateConfig {
        &self.update
    }

    pub fn create_session(&self, req: NewSession) -> Result<String, SessionError> {
        let strategy = match req.strategy.as_deref() {
            None => self.default_strategy,
            Some(name) => name.parse::<Strategy>().map_err(SessionError::Invalid)?,
        };
        if req.task_goal.trim().is_empty() {
            return Err(SessionError::Invalid("task_goal must not be empty".into()));
        }
        let id = format!("sess-{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let session = Session {
            session_id: id.clone(),
            label: req.label,
            task_goal: req.task_goal,
            policy_scope: req.policy_scope,
            strategy,
            history: Vec::new(),
            pending_violations: Vec::new(),
            flagged_policies: BTreeSet::new(),
            status: SessionStatus::Active,
        };
        self.sessions
            .lock()
            .expect("session map poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, SessionError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    /// Copy of a session's current state.
    pub fn get(&self, id: &str) -> Result<Session, SessionError> {
        Ok(self.session(id)?.lock().expect("session poisoned").clone())
    }

    /// Appends a step and evaluates it against the current snapshot.
    pub fn submit_step(&self, id: &str, thought: &str, proposed_action: &str) -> Result<StepOutcome, SessionError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().expect("session poisoned");
        if s.status == SessionStatus::Closed {
            return Err(SessionError::Closed(id.to_string()));
        }
        if thought.trim().is_empty() && proposed_action.trim().is_empty() {
            return Err(SessionError::Invalid(
                "step needs a thought or a proposed_action".into(),
            ));
        }
        let index = s.history.len() + 1;
        s.history.push(ReasoningStep::new(index, thought, proposed_action));

        let db = self.store.snapshot();
        let candidates: Vec<_> = db.query(s.policy_scope, None).into_iter().cloned().collect();
        let queued: Vec<_> = db
            .queued_for(candidates.iter().map(|p| p.id.as_str()))
            .into_iter()
            .cloned()
            .collect();
        let ctx = EvaluationContext::for_history(&s.history, s.strategy, s.task_goal.clone(), candidates, queued);
        let verdict = evaluate_step(&ctx, &self.client, Some(s.routing_key()));

        s.flagged_policies.extend(verdict.violated_policy_ids.iter().cloned());
        s.pending_violations.extend(verdict.emitted_violations.iter().cloned());
        let flushed = match self.flush_mode {
            FlushMode::Immediate => Some(self.flush_locked(&mut s)?),
            FlushMode::OnClose => None,
        };
        Ok(StepOutcome {
            session_id: id.to_string(),
            history_len: s.history.len(),
            verdict,
            context_violations: ctx.queued_violations,
            flushed,
        })
    }

    fn flush_locked(&self, s: &mut Session) -> Result<Vec<UpdateOutcome>, SessionError> {
        if s.pending_violations.is_empty() {
            return Ok(Vec::new());
        }
        let outcomes = self.apply(&s.pending_violations)?;
        s.pending_violations.clear();
        Ok(outcomes)
    }

    /// Runs references through the update pipeline in the given order.
    pub fn apply(&self, violations: &[ViolationReference]) -> Result<Vec<UpdateOutcome>, SessionError> {
        if violations.is_empty() {
            return Ok(Vec::new());
        }
        self.store
            .write(|db| apply_update(db, violations, &self.update).map_err(SessionError::from))
    }

    /// Flushes pending violations and keeps the session open.
    pub fn flush(&self, id: &str) -> Result<Vec<UpdateOutcome>, SessionError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().expect("session poisoned");
        self.flush_locked(&mut s)
    }

    /// Flushes pending violations and closes the session. Closing twice is
    /// not an error; the second call reports no outcomes. With a ground
    /// truth, a task record is stored for metrics; flagged policies count
    /// as not complied.
    pub fn close_session(&self, id: &str, truth: Option<GroundTruth>) -> Result<CloseSummary, SessionError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().expect("session poisoned");
        if s.status == SessionStatus::Closed {
            return Ok(CloseSummary {
                session_id: id.to_string(),
                already_closed: true,
                outcomes: Vec::new(),
                task_record: None,
            });
        }
        let outcomes = self.flush_locked(&mut s)?;
        s.status = SessionStatus::Closed;
        let task_record = truth.map(|t| self.record(&s, t));
        Ok(CloseSummary {
            session_id: id.to_string(),
            already_closed: false,
            outcomes,
            task_record,
        })
    }

    /// Closes without flushing and hands back the pending references, for
    /// callers that batch updates across sessions.
    pub fn close_deferred(
        &self,
        id: &str,
        truth: Option<GroundTruth>,
    ) -> Result<(Vec<ViolationReference>, Option<TaskRecord>), SessionError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().expect("session poisoned");
        if s.status == SessionStatus::Closed {
            return Ok((Vec::new(), None));
        }
        s.status = SessionStatus::Closed;
        let pending = std::mem::take(&mut s.pending_violations);
        let record = truth.map(|t| self.record(&s, t));
        Ok((pending, record))
    }

    fn record(&self, s: &Session, truth: GroundTruth) -> TaskRecord {
        let record = TaskRecord::with_flagged(
            s.routing_key(),
            truth.completed,
            &truth.entry_results,
            s.flagged_policies.iter().map(String::as_str),
        );
        self.records.lock().expect("records poisoned").push(record.clone());
        record
    }

    pub fn records(&self) -> Vec<TaskRecord> {
        self.records.lock().expect("records poisoned").clone()
    }

    pub fn metrics(&self) -> Result<MetricsReport, SessionError> {
        Ok(compute_metrics(&self.records())?)
    }

    pub fn ingest(&self, doc: &SourceDocument) -> Result<IngestReport, SessionError> {
        let report = self
            .store
            .write(|db| enhancement::ingest(doc, &self.client, &self.organization, self.dedup_threshold, db))?;
        Ok(report)
    }
}
