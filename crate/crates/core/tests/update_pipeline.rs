use policyguard_core::policy::{
    Policy, PolicyCategory, PolicyDatabase, QueueCapacity, RiskLevel, TieredQueue, ViolationReference,
};
use policyguard_core::similarity::text_similarity;
use policyguard_core::update::{apply_update, dedup_scan, DedupScope, UpdateConfig};
use proptest::prelude::*;

fn db_with(policies: &[(&str, RiskLevel)]) -> PolicyDatabase {
    let mut db = PolicyDatabase::default();
    for (id, risk) in policies {
        db.insert_policy(Policy {
            id: id.to_string(),
            category: PolicyCategory::Execution,
            scope: "any".into(),
            definition: format!("policy {id}"),
            constraints: vec![],
            risk_level: *risk,
            source: vec![],
            violation_queue: TieredQueue::new(1),
        })
        .unwrap();
    }
    db
}

fn violation(pid: &str, text: &str, step: usize) -> ViolationReference {
    ViolationReference {
        policy_id: pid.into(),
        canonical_text: text.into(),
        step_index: step,
        task_goal: "goal".into(),
        risk_level: RiskLevel::Low,
        created_at: 0,
    }
}

// Pairwise similarity of these stays well under 0.85 (checked below).
const DISTINCT: [&str; 12] = [
    "clicked an external hyperlink in a comment",
    "submitted payment without user confirmation",
    "deleted the repository branch",
    "typed credentials into an untrusted form",
    "navigated to a phishing domain",
    "modified account email address",
    "posted private data to a public forum",
    "accepted cookie consent on behalf of user",
    "ran a shell command from page text",
    "followed instructions embedded in an issue",
    "changed repository visibility to public",
    "invited an unknown collaborator",
];

#[test]
fn fixture_texts_are_pairwise_dissimilar() {
    for (i, a) in DISTINCT.iter().enumerate() {
        for b in &DISTINCT[i + 1..] {
            assert!(text_similarity(a, b).value() < 0.85, "{a:?} ~ {b:?}");
        }
    }
}

#[test]
fn full_high_queue_evicts_oldest() {
    let mut db = db_with(&[("H", RiskLevel::High)]);
    let cfg = UpdateConfig::default();
    let batch: Vec<_> = DISTINCT[..10].iter().map(|t| violation("H", t, 1)).collect();
    apply_update(&mut db, &batch, &cfg).unwrap();
    assert_eq!(db.get("H").unwrap().violation_queue.len(), 10);

    let out = apply_update(&mut db, &[violation("H", DISTINCT[10], 2)], &cfg).unwrap();
    assert!(out[0].inserted);
    let evicted = out[0].evicted.as_ref().unwrap();
    assert_eq!(evicted.canonical_text, DISTINCT[0]);
    assert_eq!(evicted.created_at, 1);
    assert_eq!(db.get("H").unwrap().violation_queue.len(), 10);
}

#[test]
fn identical_text_is_duplicate() {
    let mut db = db_with(&[("P", RiskLevel::Low)]);
    let cfg = UpdateConfig::default();
    apply_update(&mut db, &[violation("P", "clicked ad banner", 1)], &cfg).unwrap();
    let out = apply_update(&mut db, &[violation("P", "Clicked AD banner", 4)], &cfg).unwrap();
    assert!(!out[0].inserted);
    let dup = out[0].duplicate_of.as_ref().unwrap();
    assert_eq!(dup.created_at, 1);
    assert_eq!(dup.similarity, 1.0);
}

#[test]
fn nine_medium_into_capacity_seven() {
    // Hand simulation with capacity 7: items 1..=7 fill the queue, item 8
    // evicts item 1, item 9 evicts item 2, leaving items 3..=9 in order.
    let mut db = db_with(&[("M", RiskLevel::Medium)]);
    let batch: Vec<_> = DISTINCT[..9]
        .iter()
        .enumerate()
        .map(|(i, t)| violation("M", t, i + 1))
        .collect();
    let out = apply_update(&mut db, &batch, &UpdateConfig::default()).unwrap();
    assert!(out.iter().all(|o| o.inserted));
    assert!(out[..7].iter().all(|o| o.evicted.is_none()));
    assert_eq!(out[7].evicted.as_ref().unwrap().canonical_text, DISTINCT[0]);
    assert_eq!(out[8].evicted.as_ref().unwrap().canonical_text, DISTINCT[1]);
    let queue: Vec<_> = db
        .get("M")
        .unwrap()
        .violation_queue
        .iter()
        .map(|v| v.canonical_text.as_str())
        .collect();
    assert_eq!(queue, DISTINCT[2..9].to_vec());
}

#[test]
fn oldest_duplicate_wins() {
    let older = "agent clicked the sponsored link at top";
    let newer = "agent clicked the sponsored link at the top";
    let probe = "agent clicked the sponsored link on top";
    assert!(text_similarity(older, newer).value() < 1.0);
    assert!(text_similarity(probe, older).value() >= 0.85);
    assert!(text_similarity(probe, newer).value() >= 0.85);

    let mut u1 = violation("P", older, 1);
    u1.created_at = 1;
    let mut u2 = violation("P", newer, 2);
    u2.created_at = 2;
    let (hit, _) = dedup_scan(&[&u1, &u2], &violation("P", probe, 3), 0.85).unwrap();
    assert_eq!(hit.created_at, 1);
}

#[test]
fn stream_level_theta_monotonicity_does_not_hold() {
    // With "ba" dropped at 0.5 it cannot later shadow "b"; at 0.6 it can.
    let stream = ["aa", "ba", "b", "bcab"];
    let inserted = |theta: f64| {
        let mut db = db_with(&[("P", RiskLevel::High)]);
        let cfg = UpdateConfig::new(theta, QueueCapacity::default(), DedupScope::Policy).unwrap();
        let batch: Vec<_> = stream.iter().map(|t| violation("P", t, 1)).collect();
        apply_update(&mut db, &batch, &cfg)
            .unwrap()
            .iter()
            .filter(|o| o.inserted)
            .count()
    };
    assert_eq!(inserted(0.5), 3);
    assert_eq!(inserted(0.6), 2);
}

fn risk() -> impl Strategy<Value = RiskLevel> {
    prop_oneof![Just(RiskLevel::Low), Just(RiskLevel::Medium), Just(RiskLevel::High)]
}

fn text() -> impl Strategy<Value = String> {
    "[abcd][abcd ]{0,11}"
}

proptest! {
    #[test]
    fn queues_stay_bounded(
        stream in proptest::collection::vec((0usize..3, text()), 0..80),
        theta in 0.3f64..=1.0,
        risks in proptest::collection::vec(risk(), 3),
    ) {
        let ids = ["p0", "p1", "p2"];
        let mut db = db_with(&[(ids[0], risks[0]), (ids[1], risks[1]), (ids[2], risks[2])]);
        let cfg = UpdateConfig::new(theta, QueueCapacity::default(), DedupScope::TierAndCategory).unwrap();
        let batch: Vec<_> = stream.iter().map(|(p, t)| violation(ids[*p], t, 1)).collect();
        apply_update(&mut db, &batch, &cfg).unwrap();
        db.validate().unwrap();
        for p in db.policies() {
            prop_assert!(p.violation_queue.len() <= QueueCapacity::default().get(p.risk_level));
        }
    }

    #[test]
    fn repeat_is_duplicate(t in text(), theta in 0.01f64..=1.0) {
        let mut db = db_with(&[("P", RiskLevel::Low)]);
        let cfg = UpdateConfig::new(theta, QueueCapacity::default(), DedupScope::Policy).unwrap();
        let out = apply_update(&mut db, &[violation("P", &t, 1), violation("P", &t, 2)], &cfg).unwrap();
        prop_assert!(out[1].duplicate_of.is_some());
        prop_assert!(!out[1].inserted);
    }

    #[test]
    fn dedup_free_eviction_is_fifo(n in 0usize..40, cap in 1usize..8) {
        // Distinct strings never reach similarity 1.0, so theta = 1 admits all.
        let capacity = QueueCapacity { low: cap, medium: cap, high: cap };
        let mut db = PolicyDatabase::new(capacity);
        db.insert_policy(Policy {
            id: "P".into(), category: PolicyCategory::Other, scope: String::new(),
            definition: "d".into(), constraints: vec![], risk_level: RiskLevel::Low,
            source: vec![], violation_queue: TieredQueue::new(1),
        }).unwrap();
        let cfg = UpdateConfig::new(1.0, capacity, DedupScope::Policy).unwrap();
        let batch: Vec<_> = (0..n).map(|i| violation("P", &format!("item-{i}"), i + 1)).collect();
        let out = apply_update(&mut db, &batch, &cfg).unwrap();
        let evicted: Vec<_> = out.iter().filter_map(|o| o.evicted.as_ref()).map(|v| v.canonical_text.clone()).collect();
        let expected: Vec<_> = (0..n.saturating_sub(cap)).map(|i| format!("item-{i}")).collect();
        prop_assert_eq!(evicted, expected);
    }

    #[test]
    fn single_decision_is_theta_monotone(
        queued in proptest::collection::vec(text(), 0..10),
        probe in text(),
        a in 0.05f64..=1.0,
        b in 0.05f64..=1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let refs: Vec<_> = queued.iter().enumerate().map(|(i, t)| {
            let mut v = violation("P", t, 1);
            v.created_at = i as u64 + 1;
            v
        }).collect();
        let scope: Vec<_> = refs.iter().collect();
        let v = violation("P", &probe, 1);
        if dedup_scan(&scope, &v, lo).is_none() {
            prop_assert!(dedup_scan(&scope, &v, hi).is_none());
        }
    }
}
