use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{DraftPolicy, SourceDocument};

/// Deployment context the Policy Agent prompt is tailored to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrganizationContext {
    pub name: String,
    pub description: String,
    /// Who or what the policies govern.
    pub policy_subject: String,
    /// Extraction tools available to the agent.
    pub tools: Vec<String>,
}

impl Default for OrganizationContext {
    fn default() -> Self {
        OrganizationContext {
            name: "Example Organization".into(),
            description: "An organization deploying autonomous web agents on internal and public sites.".into(),
            policy_subject: "autonomous web agents acting on behalf of users".into(),
            tools: vec!["read_text".into()],
        }
    }
}

pub(crate) fn extraction_system_prompt(org: &OrganizationContext) -> String {
    let mut s = String::new();
    s.push_str(
        "You are a policy processing expert. You turn regulatory and organizational documents into \
         clear, individually enforceable policy statements.\n\n",
    );
    s.push_str("# Organization\n");
    let _ = writeln!(s, "Name: {}", org.name.trim());
    let _ = writeln!(s, "Description: {}", org.description.trim());
    let _ = writeln!(s, "Policy subject: {}", org.policy_subject.trim());
    let tools = if org.tools.is_empty() {
        "(none)".to_string()
    } else {
        org.tools.join(", ")
    };
    let _ = writeln!(s, "Available tools: {tools}\n");
    s.push_str(
        "# Workflow\n\
         Stage 1 - Extract raw text from the input source. The text below was already extracted with \
         the tool matching the source type.\n\
         Stage 2 - Extract individual policy statements from the text. Resolve ambiguity, drop \
         redundancy and normalize each statement into one imperative sentence about the policy subject.\n\
         Stage 3 - Review the extracted policies and remove duplicates, then summarize the final list.\n\n\
         # Rules\n\
         - Check the source type before choosing a tool, invoke one tool per step and wait for its output.\n\
         - Copy the sentence each policy came from into raw_statement exactly as it appears in the text.\n\
         - category is one of consent, boundary, execution, injection, other.\n\
         - risk_level is one of low, medium, high.\n\
         - A document without normative content yields an empty list.\n\
         - Reply with a single JSON object and nothing else:\n\
         {\"policies\": [{\"raw_statement\": string, \"statement\": string, \"category\": string, \
         \"risk_level\": string, \"scope\": string, \"constraints\": [string]}]}",
    );
    s
}

pub(crate) fn extraction_payload(doc: &SourceDocument) -> String {
    format!(
        "# Source\ndoc_id: {}\nkind: {}\norigin: {}\n\n# Text\n{}\n",
        doc.doc_id,
        doc.kind.as_str(),
        doc.origin,
        doc.content
    )
}

pub(crate) const DEDUP_SYSTEM_PROMPT: &str = "\
You are a policy processing expert reviewing extracted policies for duplicates. Two statements are \
duplicates when an agent that complies with one necessarily complies with the other. Reply with a \
single JSON object and nothing else: {\"merge\": bool, \"reason\": string}";

pub(crate) fn dedup_payload(kept: &DraftPolicy, candidate: &DraftPolicy, similarity: f64) -> String {
    format!(
        "# Policy A ({}, {} risk)\n{}\n\n# Policy B ({}, {} risk)\n{}\n\nPattern similarity: {similarity:.3}\n",
        kept.proposed_category,
        kept.proposed_risk_level,
        kept.refined_statement,
        candidate.proposed_category,
        candidate.proposed_risk_level,
        candidate.refined_statement,
    )
}
