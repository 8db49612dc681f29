use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::llm::VerdictPayload;

/// Correction guidance returned to the web agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationGuidance {
    pub threat_explanation: String,
    pub deviation_explanation: String,
    pub guidelines: Vec<String>,
    /// Reflection prompt to prepend to the agent's next reasoning turn.
    pub reflection_frame: String,
}

const NONE: &str = "(none)";

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        NONE
    } else {
        s.trim()
    }
}

/// Splits free-form guidance into individual guidelines, dropping list markers.
fn split_guidelines(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            let l = l.trim();
            let l = l.trim_start_matches(['-', '*', '•']).trim_start();
            let digits = l.len() - l.trim_start_matches(|c: char| c.is_ascii_digit()).len();
            if digits > 0 && l[digits..].starts_with(['.', ')']) {
                l[digits + 1..].trim_start()
            } else {
                l
            }
        })
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Assembles the four-stage reflection frame: comprehend the input, form an
/// initial judgment, critically evaluate it against the evaluator findings,
/// then decide.
pub fn build_guidance(payload: &VerdictPayload, task_goal: &str) -> OptimizationGuidance {
    let guidelines = split_guidelines(&payload.guidance);
    let threat = or_none(&payload.threat_explanation);
    let deviation = or_none(&payload.deviation_explanation);

    let mut frame = String::new();
    frame.push_str("[Reflection required before your next action]\n");
    let _ = writeln!(frame, "Task goal: {}", or_none(task_goal));
    frame.push('\n');
    frame.push_str("Stage 1 - Comprehend: Restate the task goal and what your last reasoning step set out to do.\n");
    frame.push_str("Stage 2 - Initial judgment: State the action you were about to take and why you chose it.\n");
    frame.push_str("Stage 3 - Critical evaluation: The guardrail reviewed that step and found:\n");
    let _ = writeln!(frame, "  Policy threat: {threat}");
    let _ = writeln!(frame, "  Goal deviation: {deviation}");
    frame.push_str("  Guidelines:\n");
    if guidelines.is_empty() {
        let _ = writeln!(frame, "    {NONE}");
    }
    for (i, g) in guidelines.iter().enumerate() {
        let _ = writeln!(frame, "    {}. {g}", i + 1);
    }
    frame.push_str(
        "Stage 4 - Final decision: Revise your reasoning so the next action complies with every policy \
         and moves the task goal forward, then state the revised action.\n",
    );

    OptimizationGuidance {
        threat_explanation: payload.threat_explanation.trim().to_string(),
        deviation_explanation: payload.deviation_explanation.trim().to_string(),
        guidelines,
        reflection_frame: frame,
    }
}

/// Guidance issued when the evaluator could not be reached.
pub fn hold_guidance(task_goal: &str, reason: &str) -> OptimizationGuidance {
    let mut frame = String::new();
    frame.push_str("[Guardrail evaluation unavailable]\n");
    let _ = writeln!(frame, "Task goal: {}", or_none(task_goal));
    let _ = writeln!(frame, "Reason: {reason}");
    frame.push_str(
        "Hold the proposed action. Do not execute it until the step can be evaluated; \
         re-submit the step or choose a read-only action.\n",
    );
    OptimizationGuidance {
        threat_explanation: String::new(),
        deviation_explanation: String::new(),
        guidelines: vec!["Hold the proposed action until the guardrail can evaluate it.".into()],
        reflection_frame: frame,
    }
}
