//! Guardrail runtime for LLM web agents.
//!
//! The crate keeps a structured policy knowledge base, evaluates each agent
//! reasoning step against it, issues reflection guidance when a step violates
//! a policy or drifts from the task goal, and folds detected violations back
//! into the knowledge base through similarity-filtered bounded queues.

pub mod config;
pub mod enhancement;
pub mod evaluation;
pub mod harness;
pub mod llm;
pub mod metrics;
pub mod policy;
pub mod session;
pub mod similarity;
pub mod update;
