//! Step-wise evaluation of a web agent's reasoning.
//!
//! Each step is judged on two objectives at once: whether it violates a
//! policy and whether it drifts from the task goal. The result is a pair of
//! boolean flags; when either is set the agent receives reflection guidance,
//! and each violated policy yields a [`ViolationReference`] for the update
//! pipeline.

mod guidance;
mod prompt;
mod window;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::llm::{AgentRole, LlmClient, RequestContext, ResponseSchema, VerdictPayload};
use crate::policy::{Policy, ViolationReference};

pub use guidance::{build_guidance, hold_guidance, OptimizationGuidance};
pub use prompt::{utility_payload, UTILITY_SYSTEM_PROMPT, VIOLATION_LINE_PREFIX};
pub use window::{select_window, Strategy};

/// One reasoning output of the web agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningStep {
    /// 1-based position within the session.
    pub index: usize,
    pub thought: String,
    pub proposed_action: String,
    #[serde(default)]
    pub timestamp: u64,
}

impl ReasoningStep {
    pub fn new(index: usize, thought: impl Into<String>, proposed_action: impl Into<String>) -> Self {
        ReasoningStep {
            index,
            thought: thought.into(),
            proposed_action: proposed_action.into(),
            timestamp: index as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationContext {
    pub strategy: Strategy,
    pub window: Vec<ReasoningStep>,
    pub task_goal: String,
    pub candidate_policies: Vec<Policy>,
    pub queued_violations: Vec<ViolationReference>,
}

impl EvaluationContext {
    /// Context for the last step of `history`.
    pub fn for_history(
        history: &[ReasoningStep],
        strategy: Strategy,
        task_goal: impl Into<String>,
        candidate_policies: Vec<Policy>,
        queued_violations: Vec<ViolationReference>,
    ) -> Self {
        EvaluationContext {
            strategy,
            window: select_window(history, strategy).to_vec(),
            task_goal: task_goal.into(),
            candidate_policies,
            queued_violations,
        }
    }

    pub fn current_index(&self) -> Option<usize> {
        self.window.last().map(|s| s.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Evaluated,
    /// Strategy `none`: no evaluation was attempted.
    Bypassed,
    /// The evaluator failed; the agent is told to hold the action.
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationVerdict {
    pub step_index: usize,
    pub status: VerdictStatus,
    pub policy_flag: bool,
    pub goal_flag: bool,
    pub violated_policy_ids: Vec<String>,
    pub guidance: Option<OptimizationGuidance>,
    pub emitted_violations: Vec<ViolationReference>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvaluationVerdict {
    /// The decision vector `(policy, goal)` as 0/1 indicators.
    pub fn vector(&self) -> [u8; 2] {
        [self.policy_flag as u8, self.goal_flag as u8]
    }

    pub fn is_flagged(&self) -> bool {
        self.policy_flag || self.goal_flag
    }

    fn bypassed(step_index: usize) -> Self {
        EvaluationVerdict {
            step_index,
            status: VerdictStatus::Bypassed,
            policy_flag: false,
            goal_flag: false,
            violated_policy_ids: Vec::new(),
            guidance: None,
            emitted_violations: Vec::new(),
            error: None,
        }
    }

    /// Checks the flag/guidance/violation coupling of an evaluated verdict.
    pub fn check_contract(&self) -> Result<(), String> {
        if self.status != VerdictStatus::Evaluated {
            return Ok(());
        }
        if self.guidance.is_some() != self.is_flagged() {
            return Err(format!(
                "step {}: guidance presence disagrees with flags",
                self.step_index
            ));
        }
        if self.emitted_violations.is_empty() == self.policy_flag {
            return Err(format!(
                "step {}: emitted violations disagree with policy flag",
                self.step_index
            ));
        }
        if self.violated_policy_ids.is_empty() == self.policy_flag {
            return Err(format!(
                "step {}: violated ids disagree with policy flag",
                self.step_index
            ));
        }
        Ok(())
    }
}

/// Assembles a verdict from a validated evaluator payload.
pub fn verdict_from_payload(ctx: &EvaluationContext, payload: &VerdictPayload) -> EvaluationVerdict {
    let step_index = ctx.current_index().unwrap_or(0);
    let mut seen = HashSet::new();
    let violated: Vec<String> = payload
        .violated_policy_ids
        .iter()
        .filter(|id| seen.insert(id.as_str()))
        .cloned()
        .collect();
    let policy_flag = payload.policy_violation;
    let goal_flag = payload.goal_drift;
    let emitted = if policy_flag {
        violated
            .iter()
            .filter_map(|id| ctx.candidate_policies.iter().find(|p| &p.id == id))
            .map(|p| ViolationReference {
                policy_id: p.id.clone(),
                canonical_text: payload.threat_explanation.trim().to_string(),
                step_index,
                task_goal: ctx.task_goal.clone(),
                risk_level: p.risk_level,
                created_at: 0,
            })
            .collect()
    } else {
        Vec::new()
    };
    EvaluationVerdict {
        step_index,
        status: VerdictStatus::Evaluated,
        policy_flag,
        goal_flag,
        violated_policy_ids: violated,
        guidance: (policy_flag || goal_flag).then(|| build_guidance(payload, &ctx.task_goal)),
        emitted_violations: emitted,
        error: None,
    }
}

/// Evaluates the last step of the context window with one evaluator call.
///
/// A backend failure yields an [`VerdictStatus::Unavailable`] verdict with
/// hold guidance rather than an error, so a broken evaluator never reads as
/// "compliant".
pub fn evaluate_step(ctx: &EvaluationContext, client: &LlmClient, session: Option<&str>) -> EvaluationVerdict {
    let step_index = ctx.current_index().unwrap_or(0);
    if ctx.strategy == Strategy::None || ctx.window.is_empty() {
        return EvaluationVerdict::bypassed(step_index);
    }
    let request = client
        .request(
            AgentRole::UtilityAgent,
            UTILITY_SYSTEM_PROMPT,
            utility_payload(ctx),
            ResponseSchema::StepVerdict,
        )
        .with_context(RequestContext {
            session: session.map(str::to_string),
            step_index: Some(step_index),
            window: ctx.window.iter().map(|s| s.index).collect(),
            repair: false,
        });
    let known: HashSet<&str> = ctx.candidate_policies.iter().map(|p| p.id.as_str()).collect();
    let result = client.complete_checked(&request, |p: &VerdictPayload| {
        match p.violated_policy_ids.iter().find(|id| !known.contains(id.as_str())) {
            Some(id) => Err(format!("`{id}` is not one of the listed policy ids")),
            None => Ok(()),
        }
    });
    match result {
        Ok(payload) => verdict_from_payload(ctx, &payload),
        Err(e) => {
            log::warn!("evaluation of step {step_index} unavailable: {e}");
            EvaluationVerdict {
                step_index,
                status: VerdictStatus::Unavailable,
                policy_flag: false,
                goal_flag: false,
                violated_policy_ids: Vec::new(),
                guidance: Some(hold_guidance(&ctx.task_goal, &e.to_string())),
                emitted_violations: Vec::new(),
                error: Some(e.to_string()),
            }
        }
    }
}

/// Verdicts for one strategy across a whole trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub verdicts: Vec<EvaluationVerdict>,
}

impl StrategyRun {
    pub fn flagged_steps(&self) -> Vec<usize> {
        self.verdicts
            .iter()
            .filter(|v| v.is_flagged())
            .map(|v| v.step_index)
            .collect()
    }
}

/// Evaluates every prefix of `steps` under each strategy. Strategy `none`
/// produces no verdicts. Policy context is held fixed across the run.
pub fn run_strategy_comparison(
    steps: &[ReasoningStep],
    task_goal: &str,
    candidate_policies: &[Policy],
    queued_violations: &[ViolationReference],
    strategies: &[Strategy],
    client: &LlmClient,
    session: Option<&str>,
) -> Vec<StrategyRun> {
    strategies
        .iter()
        .map(|&strategy| {
            let verdicts = if strategy == Strategy::None {
                Vec::new()
            } else {
                (1..=steps.len())
                    .map(|t| {
                        let ctx = EvaluationContext::for_history(
                            &steps[..t],
                            strategy,
                            task_goal,
                            candidate_policies.to_vec(),
                            queued_violations.to_vec(),
                        );
                        evaluate_step(&ctx, client, session)
                    })
                    .collect()
            };
            StrategyRun { strategy, verdicts }
        })
        .collect()
}
