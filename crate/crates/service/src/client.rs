//! Request builders and view rules for front ends that speak the REST
//! interface. A web dashboard renders exactly what these produce and does
//! no physics of its own.

use cia_core::pipeline::{CiaReport, Stage};
use cia_grid::Violation;
use serde::{Deserialize, Serialize};

use crate::health::{HealthStatus, LlmBackendStatus, MemoryStatus, SolverStatus};
use crate::server::{ChatRequest, ChatResponse, FieldError};

/// One rendered chat turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnView {
    pub text: String,
    pub report_card: Option<ReportView>,
    /// The grounding disclaimer is shown as a separate warning block.
    pub disclaimer: bool,
    pub escalation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportView {
    /// Verbatim from the report.
    pub decision_banner: String,
    pub stages: Vec<StageCard>,
    pub violations: Vec<ViolationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCard {
    pub stage: String,
    pub outcome: String,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRow {
    pub stage: String,
    pub contingency: Option<String>,
    pub violation: Violation,
}

fn stage_name(s: Stage) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

pub fn report_view(r: &CiaReport) -> ReportView {
    let mut violations = Vec::new();
    for s in &r.stages {
        let stage = stage_name(s.stage);
        if let Some(v) = &s.violations {
            violations.extend(v.violations.iter().map(|v| ViolationRow {
                stage: stage.clone(),
                contingency: None,
                violation: v.clone(),
            }));
        }
        for c in &s.failing_contingencies {
            violations.extend(c.hard_violations.iter().map(|v| ViolationRow {
                stage: stage.clone(),
                contingency: Some(c.element.to_string()),
                violation: v.clone(),
            }));
        }
    }
    ReportView {
        decision_banner: r.decision.as_str().to_string(),
        stages: r
            .stages
            .iter()
            .map(|s| StageCard {
                stage: stage_name(s.stage),
                outcome: serde_json::to_value(s.outcome).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                reasons: s.reasons.iter().map(|c| c.as_str().to_string()).collect(),
            })
            .collect(),
        violations,
    }
}

pub fn turn_view(resp: &ChatResponse) -> TurnView {
    TurnView {
        text: resp.turn.text.clone(),
        report_card: resp.turn.report.as_ref().map(report_view),
        disclaimer: resp.turn.diagnostics.disclaimer_added,
        escalation: resp.turn.escalation.as_ref().map(|e| e.reason.clone()),
    }
}

/// What-if form under a displayed report. Fields are raw user input.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MitigationForm {
    pub bus: String,
    pub q_mvar: String,
}

impl MitigationForm {
    /// Composes the follow-up message for the same session, or the field
    /// errors to show instead of sending anything.
    pub fn to_request(&self, session_id: &str, report: &CiaReport) -> Result<ChatRequest, Vec<FieldError>> {
        let mut errors = Vec::new();
        let bus = match self.bus.trim().parse::<u32>() {
            Ok(b) if b > 0 => Some(b),
            _ => {
                errors.push(FieldError {
                    field: "bus".into(),
                    message: "enter a bus number".into(),
                });
                None
            }
        };
        let q = match self.q_mvar.trim().trim_start_matches('+').parse::<f64>() {
            Ok(q) if q.is_finite() && q != 0.0 => Some(q),
            _ => {
                errors.push(FieldError {
                    field: "q_mvar".into(),
                    message: "enter a non-zero MVAr value".into(),
                });
                None
            }
        };
        let (Some(bus), Some(q)) = (bus, q) else {
            return Err(errors);
        };
        let c = &report.connection;
        let sign = if q > 0.0 { "+" } else { "" };
        Ok(ChatRequest {
            session_id: session_id.to_string(),
            message: format!(
                "Rerun {} MW {} at bus {} on {} with {sign}{q} MVAr at bus {bus}",
                c.p_mw, c.ctype, c.bus, report.case_name
            ),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Badge {
    Green,
    Amber,
    Red,
}

/// Red when studies cannot run or be stored, amber when only the language
/// model is missing.
pub fn health_badge(h: &HealthStatus) -> Badge {
    if h.solver == SolverStatus::FailedSelfTest || h.memory == MemoryStatus::IoError {
        Badge::Red
    } else if h.llm_backend != LlmBackendStatus::Ok {
        Badge::Amber
    } else {
        Badge::Green
    }
}
