mod support;

use std::sync::Arc;

use policyguard_core::config::FlushMode;
use policyguard_core::evaluation::Strategy;
use policyguard_core::llm::{LlmClient, MockBackend, MockReply, MockRule, MockScript, RecordingBackend};
use policyguard_core::metrics::{compute_metrics, EntryResult};
use policyguard_core::policy::{PolicyCategory, PolicyDatabase, PolicyStore, QueueCapacity, RiskLevel};
use policyguard_core::session::{GroundTruth, NewSession, SessionError, SessionManager, SessionStatus};
use policyguard_core::update::UpdateConfig;
use serde_json::Value;
use support::oracle::brute_ratio;
use support::{clear, flag_policy, policy};

fn rule(step: Option<usize>, replies: Vec<Value>) -> MockRule {
    MockRule {
        role: None,
        schema: None,
        task: None,
        step,
        window_contains: None,
        payload_contains: None,
        responses: replies.into_iter().map(MockReply::Json).collect(),
    }
}

fn db() -> PolicyDatabase {
    let mut db = PolicyDatabase::new(QueueCapacity::default());
    let mut p = policy("P1", PolicyCategory::Consent, RiskLevel::High);
    p.violation_queue = db.empty_queue(RiskLevel::High);
    db.insert_policy(p).unwrap();
    let mut p = policy("P2", PolicyCategory::Boundary, RiskLevel::Low);
    p.violation_queue = db.empty_queue(RiskLevel::Low);
    db.insert_policy(p).unwrap();
    db
}

fn manager(rules: Vec<MockRule>) -> (SessionManager, Arc<RecordingBackend>) {
    let mock = Arc::new(MockBackend::new(MockScript { rules }).unwrap());
    let rec = Arc::new(RecordingBackend::new(mock));
    let store = Arc::new(PolicyStore::in_memory(db()));
    let m = SessionManager::new(store, LlmClient::scripted(rec.clone()), UpdateConfig::default());
    (m, rec)
}

fn new(goal: &str) -> NewSession {
    NewSession {
        task_goal: goal.into(),
        policy_scope: None,
        strategy: None,
        label: None,
    }
}

#[test]
fn create_sessions() {
    let (m, _) = manager(vec![rule(None, vec![clear()])]);
    let a = m.create_session(new("g")).unwrap();
    let b = m.create_session(new("g")).unwrap();
    assert_ne!(a, b);
    let s = m.get(&a).unwrap();
    assert_eq!(s.status, SessionStatus::Active);
    assert!(s.history.is_empty());
    assert_eq!(s.strategy, Strategy::SecondOrderMarkov);
    let bad = NewSession {
        strategy: Some("sideways".into()),
        ..new("g")
    };
    assert!(matches!(m.create_session(bad), Err(SessionError::Invalid(_))));
}

#[test]
fn steps_are_evaluated_with_markov_window() {
    let (m, rec) = manager(vec![rule(None, vec![clear()])]);
    let id = m.create_session(new("g")).unwrap();
    let first = m.submit_step(&id, "look", "click [1]").unwrap();
    assert_eq!(first.verdict.vector(), [0, 0]);
    assert_eq!(first.history_len, 1);
    m.submit_step(&id, "then", "click [2]").unwrap();
    let reqs = rec.requests();
    assert_eq!(reqs[1].context.window, [1, 2]);
    assert!(reqs[1].user_payload.contains("Step 1\n") && reqs[1].user_payload.contains("Step 2\n"));
    assert_eq!(reqs[1].context.session.as_deref(), Some(id.as_str()));
}

#[test]
fn flagged_step_carries_reflection_frame() {
    let (m, _) = manager(vec![rule(None, vec![flag_policy(&["P1"], "bought without asking")])]);
    let id = m.create_session(new("g")).unwrap();
    let out = m.submit_step(&id, "buy", "click [buy]").unwrap();
    assert!(!out.verdict.guidance.unwrap().reflection_frame.is_empty());
    assert_eq!(m.get(&id).unwrap().pending_violations.len(), 1);
}

#[test]
fn unknown_and_closed_sessions() {
    let (m, _) = manager(vec![rule(None, vec![clear()])]);
    assert!(matches!(
        m.submit_step("sess-99", "a", "b"),
        Err(SessionError::UnknownSession(_))
    ));
    let id = m.create_session(new("g")).unwrap();
    m.close_session(&id, None).unwrap();
    assert!(matches!(m.submit_step(&id, "a", "b"), Err(SessionError::Closed(_))));
    let again = m.close_session(&id, None).unwrap();
    assert!(again.already_closed && again.outcomes.is_empty());
}

#[test]
fn close_without_violations_leaves_database() {
    let (m, _) = manager(vec![rule(None, vec![clear()])]);
    let before = m.store().snapshot();
    let id = m.create_session(new("g")).unwrap();
    m.submit_step(&id, "a", "b").unwrap();
    let s = m.close_session(&id, None).unwrap();
    assert!(s.outcomes.is_empty());
    assert!(Arc::ptr_eq(&before, &m.store().snapshot()));
}

#[test]
fn close_with_one_violation_grows_queue() {
    let (m, _) = manager(vec![rule(None, vec![flag_policy(&["P1"], "bought without asking")])]);
    let id = m.create_session(new("g")).unwrap();
    m.submit_step(&id, "a", "b").unwrap();
    let s = m.close_session(&id, None).unwrap();
    assert_eq!(s.outcomes.len(), 1);
    assert!(s.outcomes[0].inserted);
    assert_eq!(m.store().snapshot().get("P1").unwrap().violation_queue.len(), 1);
}

#[test]
fn near_duplicates_in_one_session() {
    let a = "The agent confirmed the payment without asking the user.";
    let b = "The agent confirmed a payment without asking the user.";
    assert!(brute_ratio(&a.to_lowercase(), &b.to_lowercase()) >= 0.85);
    let (m, _) = manager(vec![
        rule(Some(1), vec![flag_policy(&["P1"], a)]),
        rule(Some(2), vec![flag_policy(&["P1"], b)]),
    ]);
    let id = m.create_session(new("g")).unwrap();
    m.submit_step(&id, "a", "b").unwrap();
    m.submit_step(&id, "c", "d").unwrap();
    let s = m.close_session(&id, None).unwrap();
    assert_eq!(s.outcomes.iter().filter(|o| o.inserted).count(), 1);
    assert_eq!(s.outcomes.iter().filter(|o| o.duplicate_of.is_some()).count(), 1);
    assert_eq!(m.store().snapshot().get("P1").unwrap().violation_queue.len(), 1);
}

#[test]
fn immediate_flush_mode() {
    let (m, _) = manager(vec![rule(None, vec![flag_policy(&["P1"], "bought without asking")])]);
    let m = m.with_flush_mode(FlushMode::Immediate);
    let id = m.create_session(new("g")).unwrap();
    let out = m.submit_step(&id, "a", "b").unwrap();
    assert_eq!(out.flushed.as_ref().unwrap().len(), 1);
    assert_eq!(m.store().snapshot().get("P1").unwrap().violation_queue.len(), 1);
    assert!(m.close_session(&id, None).unwrap().outcomes.is_empty());
}

#[test]
fn queued_references_become_context() {
    let (m, _) = manager(vec![rule(None, vec![flag_policy(&["P1"], "bought without asking")])]);
    let id = m.create_session(new("g")).unwrap();
    let first = m.submit_step(&id, "a", "b").unwrap();
    assert!(first.context_violations.is_empty());
    m.close_session(&id, None).unwrap();
    let id = m.create_session(new("g")).unwrap();
    let next = m.submit_step(&id, "a", "b").unwrap();
    assert_eq!(next.context_violations.len(), 1);
    assert_eq!(next.context_violations[0].canonical_text, "bought without asking");
}

#[test]
fn scope_filters_candidates() {
    let (m, rec) = manager(vec![rule(None, vec![clear()])]);
    let id = m
        .create_session(NewSession {
            policy_scope: Some(PolicyCategory::Boundary),
            ..new("g")
        })
        .unwrap();
    m.submit_step(&id, "a", "b").unwrap();
    let payload = &rec.requests()[0].user_payload;
    assert!(payload.contains("[P2]") && !payload.contains("[P1]"));
}

#[test]
fn concurrent_steps_stay_contiguous() {
    let (m, _) = manager(vec![rule(None, vec![clear()])]);
    let ids: Vec<_> = (0..4).map(|_| m.create_session(new("g")).unwrap()).collect();
    std::thread::scope(|s| {
        for id in &ids {
            for _ in 0..3 {
                let m = &m;
                s.spawn(move || {
                    for _ in 0..5 {
                        m.submit_step(id, "t", "a").unwrap();
                    }
                });
            }
        }
    });
    for id in &ids {
        let h = m.get(id).unwrap().history;
        assert_eq!(h.len(), 15);
        assert!(h.iter().enumerate().all(|(i, s)| s.index == i + 1));
    }
}

#[test]
fn metrics_match_recorded_records() {
    let (m, _) = manager(vec![
        rule(Some(2), vec![flag_policy(&["P1"], "bought without asking")]),
        rule(None, vec![clear()]),
    ]);
    let truth = |done| GroundTruth {
        completed: done,
        entry_results: vec![EntryResult {
            policy_id: "P1".into(),
            complied: true,
        }],
    };
    assert!(m.metrics().is_err());
    let a = m.create_session(new("g")).unwrap();
    m.submit_step(&a, "a", "b").unwrap();
    m.close_session(&a, Some(truth(true))).unwrap();
    let b = m.create_session(new("g")).unwrap();
    m.submit_step(&b, "a", "b").unwrap();
    m.submit_step(&b, "c", "d").unwrap();
    let summary = m.close_session(&b, Some(truth(true))).unwrap();
    assert!(!summary.task_record.unwrap().compliant);
    let report = m.metrics().unwrap();
    assert_eq!(report, compute_metrics(&m.records()).unwrap());
    assert_eq!((report.completion, report.pcr_per_task, report.cup), (1.0, 0.5, 0.5));
}
