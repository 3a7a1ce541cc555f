//! Connection impact assessment: staged pipeline, capacity search, tools,
//! guardrails, the agent loop, study memory and self-improvement.

pub mod agent;
pub mod bench;
pub mod capacity;
pub mod error;
pub mod guardrails;
pub mod lessons;
pub mod llm;
pub mod memory;
pub mod pipeline;
pub mod scenarios;
pub mod scripted;
pub mod tools;

pub use agent::{Agent, AgentConfig, SessionContext, TurnOutput};
pub use capacity::{explain_rejection, find_max_capacity, CapacityResult, RejectionExplanation};
pub use error::CiaError;
pub use pipeline::{escalation_level, run_cia, run_cia_with_mitigation, CiaReport, Decision, PipelineConfig};
