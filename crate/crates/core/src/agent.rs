//! The agent turn: guardrail gates, prompt assembly, bounded tool-calling
//! rounds against a chat model, grounding scan and persistence.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use cia_grid::ConnectionType;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::capacity::{find_best_bus, BestBusResult, CapacityResult};
use crate::guardrails::{
    clarification_prompt, classify_capacity_question, extract_context_hints, grounding_scan, is_cia_like,
    missing_required_inputs, CapacityFamily, ContextHints, GroundingFinding, RequestKind, RequiredField,
};
use crate::lessons::LessonStore;
use crate::llm::{ChatModel, LlmError, Message, Role, Usage};
use crate::memory::{NewStudy, StudyRecord};
use crate::pipeline::CiaReport;
use crate::tools::{is_simulation, ToolRegistry};

pub const MAX_ROUNDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    /// USD per million prompt tokens.
    pub prompt_per_mtok: f64,
    /// USD per million completion tokens.
    pub completion_per_mtok: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriceTable {
    pub default: ModelPrice,
    pub models: HashMap<String, ModelPrice>,
}

impl Default for PriceTable {
    fn default() -> Self {
        Self {
            default: ModelPrice {
                prompt_per_mtok: 0.0,
                completion_per_mtok: 0.0,
            },
            models: HashMap::new(),
        }
    }
}

impl PriceTable {
    pub fn cost(&self, model: &str, usage: Usage) -> f64 {
        let p = self.models.get(model).unwrap_or(&self.default);
        (usage.prompt_tokens as f64 * p.prompt_per_mtok + usage.completion_tokens as f64 * p.completion_per_mtok) / 1e6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub max_rounds: usize,
    pub memory_cap: usize,
    pub default_case: String,
    pub capacity_mw_min: f64,
    pub capacity_mw_max: f64,
    pub capacity_tol_mw: f64,
    /// Candidates given a full search in best-bus questions.
    pub best_bus_full_checks: usize,
    pub prices: PriceTable,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_rounds: MAX_ROUNDS,
            memory_cap: 5,
            default_case: "ieee118".into(),
            capacity_mw_min: 0.0,
            capacity_mw_max: 500.0,
            capacity_tol_mw: 1.0,
            best_bus_full_checks: 3,
            prices: PriceTable::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionContext {
    pub session_id: String,
    pub history: Vec<Message>,
    pub case_alias: Option<String>,
    pub last_report: Option<CiaReport>,
    #[serde(default)]
    pub turns: Vec<TurnDiagnostics>,
}

impl SessionContext {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            ..Default::default()
        }
    }

    pub fn push_user(&mut self, text: impl Into<String>) {
        self.history.push(Message::user(text));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    CapacityForced,
    BestBusForced,
    Clarification,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Escalation {
    pub escalate: bool,
    pub reason: String,
}

impl Escalation {
    fn new(reason: impl Into<String>) -> Self {
        Self {
            escalate: true,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub name: String,
    pub arguments: serde_json::Value,
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnDiagnostics {
    pub route: Route,
    pub tools_called: Vec<ToolCallRecord>,
    pub llm_calls: usize,
    pub analytic_tool_called: bool,
    pub grounding_findings: Vec<GroundingFinding>,
    pub disclaimer_added: bool,
    pub missing_inputs: Vec<RequiredField>,
    pub hints: ContextHints,
    pub usage: Usage,
    pub cost_usd: f64,
    pub latency_s: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl TurnDiagnostics {
    fn new(route: Route, hints: ContextHints) -> Self {
        Self {
            route,
            tools_called: vec![],
            llm_calls: 0,
            analytic_tool_called: false,
            grounding_findings: vec![],
            disclaimer_added: false,
            missing_inputs: vec![],
            hints,
            usage: Usage::default(),
            cost_usd: 0.0,
            latency_s: 0.0,
            warnings: vec![],
        }
    }

    pub fn simulation_tools(&self) -> usize {
        self.tools_called.iter().filter(|t| is_simulation(&t.name)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutput {
    pub text: String,
    pub report: Option<CiaReport>,
    pub capacity: Option<CapacityResult>,
    pub best_bus: Option<BestBusResult>,
    pub escalation: Option<Escalation>,
    pub diagnostics: TurnDiagnostics,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("session history must end with a user message")]
    NoUserMessage,
}

pub const BASE_IDENTITY: &str = "You are a power-system interconnection engineer's assistant. You answer questions about \
connecting loads and generators to transmission networks by calling simulation tools.

Before acting, reason through four considerations: what the user is requesting, what data is required, \
the appropriate sequence of tool invocations, and whether each intermediate result fully addresses the question. \
Reflect on every tool result before deciding the next action.

Never state specific MW, pu, MVA, or percentage values for individual grid elements unless those values originated \
from a physics tool in the current conversation or are well-known published standards. Approval and rejection \
decisions come only from the assessment tools; you may add qualitative engineering judgment about them.

Memory usage rules: remembered studies are earlier runs of this tool, not independent historical analyses. \
Never describe them as historical studies or past analyses. Prefer a fresh simulation for a new question and cite memory \
only as supplementary context.

If the bus, the power in MW or the connection type of a requested assessment is missing, ask for it instead of guessing. \
Do not assume a load when no type was given.";

pub const MEMORY_CAVEAT: &str = "These entries are earlier simulations in the current session, not independent \
historical data. Cite them only as supplementary context.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptAssembly {
    pub base_identity: String,
    pub lessons_block: String,
    pub memory_block: String,
    pub hints_block: String,
}

impl PromptAssembly {
    pub fn assembled(&self) -> String {
        [&self.base_identity, &self.lessons_block, &self.memory_block, &self.hints_block]
            .into_iter()
            .filter(|b| !b.is_empty())
            .cloned()
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

pub fn build_system_prompt(lessons: &[String], memory: &[StudyRecord], hints: &ContextHints) -> PromptAssembly {
    let lessons_block = if lessons.is_empty() {
        String::new()
    } else {
        let items: Vec<String> = lessons.iter().enumerate().map(|(i, l)| format!("{}. {l}", i + 1)).collect();
        format!("Lessons from earlier evaluations:\n{}", items.join("\n"))
    };
    let memory_block = if memory.is_empty() {
        String::new()
    } else {
        let items: Vec<String> = memory.iter().map(|r| format!("- [{}] {}", r.id, r.summary)).collect();
        format!("Remembered studies. {MEMORY_CAVEAT}\n{}", items.join("\n"))
    };
    PromptAssembly {
        base_identity: BASE_IDENTITY.to_string(),
        lessons_block,
        memory_block,
        hints_block: format!("Detected context hints:\n{}", hints.render()),
    }
}

/// Deterministic answer for a forced capacity search. Every number is a
/// field of the result.
pub fn summarize_capacity(r: &CapacityResult) -> String {
    let mut s = format!(
        "Maximum {} capacity at bus {} on {}: {:.2} MW. The search assessed {} points between {:.2} and {:.2} MW with a tolerance of {:.2} MW.",
        r.ctype, r.bus, r.case_name, r.max_approved_mw, r.iterations, r.mw_min, r.mw_max, r.tol_mw
    );
    if let Some(b) = &r.boundary_reject {
        s.push_str(&format!(" The nearest rejected size was {:.2} MW", b.connection.p_mw));
        if let Some(e) = &r.rejection_explanation {
            s.push_str(&format!(", limited by {}", e.limiting_factor.as_str()));
        }
        s.push('.');
    }
    if r.fallback_used {
        s.push_str(" The assessments were not monotone in MW, so the result is the largest approved point of a coarse scan.");
    }
    s
}

pub fn summarize_best_bus(r: &BestBusResult) -> String {
    match &r.best {
        Some(b) => format!(
            "Best bus for {} on {}: bus {} with {:.2} MW approved.\n{}",
            b.ctype,
            b.case_name,
            b.bus,
            b.max_approved_mw,
            summarize_capacity(b)
        ),
        None => "No bus could be assessed.".into(),
    }
}

pub struct Agent {
    tools: Arc<ToolRegistry>,
    llm: Option<Arc<dyn ChatModel>>,
    lessons: Arc<LessonStore>,
    cfg: AgentConfig,
}

impl Agent {
    pub fn new(tools: Arc<ToolRegistry>, llm: Option<Arc<dyn ChatModel>>, lessons: Arc<LessonStore>, cfg: AgentConfig) -> Self {
        Self { tools, llm, lessons, cfg }
    }

    pub fn tools(&self) -> &Arc<ToolRegistry> {
        &self.tools
    }

    pub fn lessons(&self) -> &Arc<LessonStore> {
        &self.lessons
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn with_llm(&self, llm: Option<Arc<dyn ChatModel>>) -> Self {
        Self {
            tools: self.tools.clone(),
            llm,
            lessons: self.lessons.clone(),
            cfg: self.cfg.clone(),
        }
    }

    pub fn model_id(&self) -> Option<String> {
        self.llm.as_ref().map(|l| l.model_id().to_string())
    }

    pub fn has_llm(&self) -> bool {
        self.llm.is_some()
    }

    /// Prompt for the current session state.
    pub fn system_prompt(&self, session: &SessionContext, hints: &ContextHints) -> PromptAssembly {
        let case = session.case_alias.as_deref().unwrap_or(&self.cfg.default_case);
        let memory = self
            .tools
            .memory()
            .relevant(&session.session_id, Some(case), hints.bus, self.cfg.memory_cap);
        build_system_prompt(&self.lessons.texts(), &memory, hints)
    }

    /// Runs one turn and appends the assistant reply to the history.
    pub fn respond(&self, session: &mut SessionContext) -> Result<TurnOutput, AgentError> {
        if session.history.last().is_none_or(|m| m.role != Role::User) {
            return Err(AgentError::NoUserMessage);
        }
        let started = Instant::now();
        let mut out = self.turn(session);
        out.diagnostics.latency_s = started.elapsed().as_secs_f64();
        session.history.push(Message::assistant(out.text.clone()));
        if let Some(r) = &out.report {
            session.last_report = Some(r.clone());
        }
        session.turns.push(out.diagnostics.clone());
        Ok(out)
    }

    fn finish(text: String, diagnostics: TurnDiagnostics) -> TurnOutput {
        TurnOutput {
            text,
            report: None,
            capacity: None,
            best_bus: None,
            escalation: None,
            diagnostics,
        }
    }

    fn escalate(reason: String, text: String, diagnostics: TurnDiagnostics) -> TurnOutput {
        TurnOutput {
            escalation: Some(Escalation::new(reason)),
            ..Self::finish(text, diagnostics)
        }
    }

    fn turn(&self, session: &mut SessionContext) -> TurnOutput {
        let mut hints = extract_context_hints(&session.history);
        hints.last_report_status = session.last_report.as_ref().map(|r| r.decision);
        if let Some(c) = &hints.case_alias {
            session.case_alias = Some(c.clone());
        }
        let case = session.case_alias.clone().unwrap_or_else(|| self.cfg.default_case.clone());

        let cls = classify_capacity_question(&session.history);
        if cls.is_capacity() {
            let best = cls.family == CapacityFamily::BestBus;
            let route = if best { Route::BestBusForced } else { Route::CapacityForced };
            let mut diag = TurnDiagnostics::new(route, hints.clone());
            let kind = if best { RequestKind::BestBus } else { RequestKind::Capacity };
            let missing: Vec<RequiredField> = if hints.ctype.is_none() { vec![RequiredField::Type] } else { vec![] };
            if !missing.is_empty() {
                diag.route = Route::Clarification;
                diag.missing_inputs = missing.clone();
                return Self::finish(clarification_prompt(&missing, kind), diag);
            }
            let ctype = hints.ctype.expect("checked above");
            return if best {
                self.forced_best_bus(session, &case, ctype, diag)
            } else {
                self.forced_capacity(session, &case, cls.bus.expect("specific family has a bus"), ctype, diag)
            };
        }

        if is_cia_like(&session.history) {
            let missing = missing_required_inputs(&session.history, RequestKind::Cia);
            if !missing.is_empty() {
                let mut diag = TurnDiagnostics::new(Route::Clarification, hints);
                diag.missing_inputs = missing.clone();
                return Self::finish(clarification_prompt(&missing, RequestKind::Cia), diag);
            }
        }
        self.llm_loop(session, hints)
    }

    fn forced_capacity(
        &self,
        session: &SessionContext,
        case: &str,
        bus: cia_grid::BusId,
        ctype: ConnectionType,
        mut diag: TurnDiagnostics,
    ) -> TurnOutput {
        let args = json!({
            "case_path": case,
            "bus": bus.0,
            "connection_type": ctype.as_str(),
            "mw_min": self.cfg.capacity_mw_min,
            "mw_max": self.cfg.capacity_mw_max,
            "tol_mw": self.cfg.capacity_tol_mw,
        });
        let outcome = self.tools.execute_total("find_max_capacity", &args, &session.session_id);
        diag.tools_called.push(ToolCallRecord {
            name: "find_max_capacity".into(),
            arguments: args,
            ok: outcome.result.ok,
            error: outcome.result.error.clone(),
        });
        if let Some(Err(w)) = &outcome.memory {
            diag.warnings.push(format!("study not saved: {w}"));
        }
        match outcome.capacity {
            Some(r) => {
                diag.analytic_tool_called = true;
                let text = summarize_capacity(&r);
                TurnOutput {
                    capacity: Some(r),
                    ..Self::finish(text, diag)
                }
            }
            None => {
                let err = outcome.result.error.unwrap_or_default();
                Self::escalate(
                    format!("capacity search failed: {err}"),
                    format!("I could not complete the capacity search ({err}). This needs review by an engineer; I will not estimate a value."),
                    diag,
                )
            }
        }
    }

    fn forced_best_bus(&self, session: &SessionContext, case: &str, ctype: ConnectionType, mut diag: TurnDiagnostics) -> TurnOutput {
        diag.tools_called.push(ToolCallRecord {
            name: "find_max_capacity".into(),
            arguments: json!({"case_path": case, "bus": "all load buses", "connection_type": ctype.as_str()}),
            ok: true,
            error: None,
        });
        let result = cia_grid::load_case(case).map_err(crate::error::CiaError::from).and_then(|c| {
            find_best_bus(
                &c,
                ctype,
                self.cfg.capacity_mw_min,
                self.cfg.capacity_mw_max,
                self.cfg.capacity_tol_mw,
                self.cfg.best_bus_full_checks,
                self.tools.config(),
            )
        });
        match result {
            Ok(r) => {
                diag.analytic_tool_called = true;
                if let Some(best) = &r.best {
                    if let Err(e) = self.tools.memory().append(NewStudy::from_capacity(&session.session_id, best)) {
                        diag.warnings.push(format!("study not saved: {e}"));
                    }
                }
                let text = summarize_best_bus(&r);
                TurnOutput {
                    capacity: r.best.clone(),
                    best_bus: Some(r),
                    ..Self::finish(text, diag)
                }
            }
            Err(e) => {
                if let Some(t) = diag.tools_called.last_mut() {
                    t.ok = false;
                    t.error = Some(e.to_string());
                }
                Self::escalate(
                    format!("best-bus search failed: {e}"),
                    format!("I could not complete the best-bus search ({e}). This needs review by an engineer."),
                    diag,
                )
            }
        }
    }

    fn llm_loop(&self, session: &SessionContext, hints: ContextHints) -> TurnOutput {
        let mut diag = TurnDiagnostics::new(Route::Llm, hints.clone());
        let Some(llm) = &self.llm else {
            return Self::escalate(
                "no language model configured".into(),
                "No language model is configured, so I cannot answer this request. Please route it to an engineer or ask a \
direct capacity question."
                    .into(),
                diag,
            );
        };
        let prompt = self.system_prompt(session, &hints);
        let mut msgs = vec![Message::system(prompt.assembled())];
        msgs.extend(session.history.iter().cloned());

        let mut report: Option<CiaReport> = None;
        let mut capacity: Option<CapacityResult> = None;
        let mut final_text: Option<String> = None;
        for _round in 0..self.cfg.max_rounds {
            diag.llm_calls += 1;
            let resp = match llm.chat(&msgs, self.tools.specs()) {
                Ok(r) => r,
                Err(e) => return self.transport_failure(e, diag, report, capacity, llm.model_id()),
            };
            diag.usage += resp.usage;
            if resp.tool_calls.is_empty() {
                final_text = Some(resp.content.unwrap_or_default());
                break;
            }
            msgs.push(Message::assistant_calls(resp.content.unwrap_or_default(), resp.tool_calls.clone()));
            for call in &resp.tool_calls {
                let outcome = self.tools.execute_total(&call.name, &call.arguments, &session.session_id);
                diag.tools_called.push(ToolCallRecord {
                    name: call.name.clone(),
                    arguments: call.arguments.clone(),
                    ok: outcome.result.ok,
                    error: outcome.result.error.clone(),
                });
                if outcome.result.ok && outcome.result.grounding {
                    diag.analytic_tool_called = true;
                }
                if let Some(Err(w)) = &outcome.memory {
                    diag.warnings.push(format!("study not saved: {w}"));
                }
                if outcome.report.is_some() {
                    report = outcome.report.clone();
                }
                if outcome.capacity.is_some() {
                    capacity = outcome.capacity.clone();
                }
                let content = serde_json::to_string(&outcome.result).expect("tool result serializes");
                msgs.push(Message::tool(call.id.clone(), content));
            }
        }
        diag.cost_usd = self.cfg.prices.cost(llm.model_id(), diag.usage);

        let (text, escalation) = match final_text {
            Some(t) => (t, None),
            None => {
                let done: Vec<String> = diag
                    .tools_called
                    .iter()
                    .map(|t| format!("{} ({})", t.name, if t.ok { "ok" } else { "failed" }))
                    .collect();
                let mut t = format!(
                    "I reached the limit of {} tool rounds without a final answer. Tools executed: {}.",
                    self.cfg.max_rounds,
                    done.join(", ")
                );
                if let Some(r) = &report {
                    t.push_str(&format!(" Latest assessment: {}.", r.summary_line()));
                }
                t.push_str(" This request is escalated for review by an engineer.");
                (t, Some(Escalation::new("tool round budget exhausted")))
            }
        };
        let (findings, amended) = grounding_scan(&text, diag.analytic_tool_called);
        diag.disclaimer_added = amended != text;
        diag.grounding_findings = findings;
        TurnOutput {
            text: amended,
            report,
            capacity,
            best_bus: None,
            escalation,
            diagnostics: diag,
        }
    }

    fn transport_failure(
        &self,
        e: LlmError,
        mut diag: TurnDiagnostics,
        report: Option<CiaReport>,
        capacity: Option<CapacityResult>,
        model: &str,
    ) -> TurnOutput {
        diag.cost_usd = self.cfg.prices.cost(model, diag.usage);
        let mut text = format!("The language model could not be reached ({e}). I will not guess an answer; this request is escalated for review by an engineer.");
        if let Some(r) = &report {
            text.push_str(&format!(" The last completed assessment was: {}.", r.summary_line()));
        }
        TurnOutput {
            text,
            report,
            capacity,
            best_bus: None,
            escalation: Some(Escalation::new(format!("llm failure: {e}"))),
            diagnostics: diag,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_blocks_leave_identity_and_hints() {
        let p = build_system_prompt(&[], &[], &ContextHints::default());
        assert_eq!(p.assembled(), format!("{}\n\n{}", p.base_identity, p.hints_block));
    }

    #[test]
    fn lessons_keep_order() {
        let lessons = vec!["first".to_string(), "second".into(), "third".into()];
        let text = build_system_prompt(&lessons, &[], &ContextHints::default()).assembled();
        let pos: Vec<usize> = lessons.iter().map(|l| text.find(l.as_str()).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn prices_scale_per_million() {
        let mut t = PriceTable::default();
        t.models.insert(
            "m".into(),
            ModelPrice {
                prompt_per_mtok: 1.0,
                completion_per_mtok: 2.0,
            },
        );
        let c = t.cost(
            "m",
            Usage {
                prompt_tokens: 1_000_000,
                completion_tokens: 500_000,
            },
        );
        assert!((c - 2.0).abs() < 1e-12);
    }
}
