//! Scenario scoring, benchmark runs with TSA/PA/latency/cost metrics, and the
//! lesson optimization loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use chrono::{DateTime, Utc};
use cia_grid::ConnectionType;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{Agent, SessionContext, ToolCallRecord};
use crate::lessons::{Lesson, LessonStore};
use crate::llm::{ChatModel, LlmError, Message};
use crate::memory::MemoryError;

pub const ABSTAIN: &str = "ABSTAIN";
pub const DEFAULT_THRESHOLD: f64 = 70.0;
pub const W_ACTION: f64 = 0.5;
pub const W_CONTENT: f64 = 0.35;
pub const W_FORMAT: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    CompleteLoad,
    CompleteGeneration,
    MissingBus,
    MissingMw,
    MissingType,
    MultiTurn,
    FollowUp,
    EdgeCase,
    Theory,
    // regression-suite kinds
    ContingencyConsistency,
    MitigationRealism,
    MaxCapacityFollowUp,
    FormattingConstraint,
    Counterfactual,
    BackendPivot,
    MitigationBoundary,
    PhrasingVariant,
}

impl Category {
    /// Benchmark distribution over the nine base categories.
    pub const TABLE_V: [(Category, usize); 9] = [
        (Category::CompleteLoad, 8),
        (Category::CompleteGeneration, 8),
        (Category::MissingBus, 5),
        (Category::MissingMw, 5),
        (Category::MissingType, 5),
        (Category::MultiTurn, 6),
        (Category::FollowUp, 5),
        (Category::EdgeCase, 4),
        (Category::Theory, 4),
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::CompleteLoad => "complete_load",
            Category::CompleteGeneration => "complete_generation",
            Category::MissingBus => "missing_bus",
            Category::MissingMw => "missing_mw",
            Category::MissingType => "missing_type",
            Category::MultiTurn => "multi_turn",
            Category::FollowUp => "follow_up",
            Category::EdgeCase => "edge_case",
            Category::Theory => "theory",
            Category::ContingencyConsistency => "contingency_consistency",
            Category::MitigationRealism => "mitigation_realism",
            Category::MaxCapacityFollowUp => "max_capacity_follow_up",
            Category::FormattingConstraint => "formatting_constraint",
            Category::Counterfactual => "counterfactual",
            Category::BackendPivot => "backend_pivot",
            Category::MitigationBoundary => "mitigation_boundary",
            Category::PhrasingVariant => "phrasing_variant",
        }
    }

    pub fn is_missing_field(self) -> bool {
        matches!(self, Category::MissingBus | Category::MissingMw | Category::MissingType)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedParse {
    pub bus: u32,
    #[serde(default)]
    pub mw: Option<f64>,
    #[serde(rename = "type")]
    pub ctype: ConnectionType,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub category: Category,
    pub turns: Vec<String>,
    pub expected_tool: String,
    #[serde(default)]
    pub expected_parse: Option<ExpectedParse>,
    #[serde(default)]
    pub content_keywords: Vec<String>,
    #[serde(default = "default_threshold")]
    pub score_threshold: f64,
    #[serde(default)]
    pub adversarial: bool,
}

impl Scenario {
    pub fn expects_abstain(&self) -> bool {
        self.expected_tool == ABSTAIN
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub name: String,
    pub scenarios: Vec<Scenario>,
}

impl Suite {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| BenchError::Format(format!("{}: {e}", path.display())))
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("suite serializes");
        s.push('\n');
        s
    }

    pub fn unique_turns(&self) -> BTreeSet<&str> {
        self.scenarios.iter().flat_map(|s| s.turns.iter().map(String::as_str)).collect()
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("scenario list is empty; metrics are undefined")]
    Empty,
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad scenario file: {0}")]
    Format(String),
}

/// What the agent did on a scenario's final turn.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub tools_called: Vec<String>,
    pub text: String,
    pub has_report: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub s_action: f64,
    pub s_content: f64,
    pub s_format: f64,
}

impl ScoreBreakdown {
    /// Weighted total on a 0 to 100 scale.
    pub fn total(&self) -> f64 {
        100.0 * (W_ACTION * self.s_action + W_CONTENT * self.s_content + W_FORMAT * self.s_format)
    }
}

pub fn action_correct(expected_tool: &str, tools_called: &[String]) -> bool {
    if expected_tool == ABSTAIN {
        tools_called.is_empty()
    } else {
        tools_called.iter().any(|t| t == expected_tool)
    }
}

fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split(['.', '!', '?', '\n']).map(str::trim).filter(|s| !s.is_empty())
}

fn decision_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"(?i)\b(approve[sd]?|approval|reject(?:ed|s)?|rejection|borderline)\b").unwrap())
}

fn stage_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| {
        Regex::new(r"(?i)\b(f[1-4]|stages?|steady[- ]state|contingency|n-1|transient|short[- ]circuit|scr)\b").unwrap()
    })
}

/// With a report the answer must state a decision; otherwise any sentence of
/// at least three words counts.
pub fn has_answer_sentence(text: &str, has_report: bool) -> bool {
    if has_report {
        sentences(text).any(|s| decision_re().is_match(s))
    } else {
        sentences(text).any(|s| s.split_whitespace().count() >= 3)
    }
}

pub fn mentions_stage(text: &str) -> bool {
    stage_re().is_match(text)
}

pub fn format_score(text: &str, has_report: bool) -> f64 {
    let answer = has_answer_sentence(text, has_report);
    let stages = !has_report || mentions_stage(text);
    match (answer, stages) {
        (true, true) => 1.0,
        (false, false) => 0.0,
        _ => 0.5,
    }
}

pub fn content_score(text: &str, keywords: &[String]) -> f64 {
    if keywords.is_empty() {
        return 1.0;
    }
    let lower = text.to_lowercase();
    let hits = keywords.iter().filter(|k| lower.contains(&k.to_lowercase())).count();
    hits as f64 / keywords.len() as f64
}

pub fn score_response(scenario: &Scenario, t: &Transcript) -> ScoreBreakdown {
    ScoreBreakdown {
        s_action: if action_correct(&scenario.expected_tool, &t.tools_called) { 1.0 } else { 0.0 },
        s_content: content_score(&t.text, &scenario.content_keywords),
        s_format: format_score(&t.text, t.has_report),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedFields {
    pub bus: Option<u32>,
    pub mw: Option<f64>,
    pub ctype: Option<ConnectionType>,
}

/// Connection parameters from the last assessment-type tool call.
pub fn parsed_fields(calls: &[ToolCallRecord]) -> Option<ParsedFields> {
    let call = calls
        .iter()
        .rev()
        .find(|c| matches!(c.name.as_str(), "run_cia" | "run_cia_with_mitigation" | "find_max_capacity"))?;
    let a = &call.arguments;
    let ctype = |v: Option<&Value>| v.and_then(|v| serde_json::from_value(v.clone()).ok());
    let bus = |v: Option<&Value>| v.and_then(Value::as_u64).map(|b| b as u32);
    if call.name == "find_max_capacity" {
        Some(ParsedFields {
            bus: bus(a.get("bus")),
            mw: None,
            ctype: ctype(a.get("connection_type")),
        })
    } else {
        let c = a.get("connection")?;
        Some(ParsedFields {
            bus: bus(c.get("bus")),
            mw: c.get("capacity_mw").and_then(Value::as_f64),
            ctype: ctype(c.get("type")),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseScore {
    pub matched: usize,
    pub compared: usize,
}

pub fn parse_score(expected: &ExpectedParse, got: &ParsedFields) -> ParseScore {
    let mut s = ParseScore::default();
    let mut check = |ok: Option<bool>| {
        if let Some(ok) = ok {
            s.compared += 1;
            s.matched += usize::from(ok);
        }
    };
    check(got.bus.map(|b| b == expected.bus));
    check(expected.mw.zip(got.mw).map(|(e, g)| (e - g).abs() < 1e-6));
    check(got.ctype.map(|t| t == expected.ctype));
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: String,
    pub category: Category,
    pub adversarial: bool,
    pub turns: usize,
    pub tools_called: Vec<String>,
    pub final_text: String,
    pub has_report: bool,
    pub escalated: bool,
    pub score: ScoreBreakdown,
    pub total: f64,
    pub passed: bool,
    pub action_correct: bool,
    pub parse: Option<ParseScore>,
    pub latency_s: f64,
    pub requests: usize,
    pub llm_calls: usize,
    pub cost_usd: f64,
    pub error: Option<String>,
}

pub fn run_scenario(agent: &Agent, scenario: &Scenario, threshold: f64) -> ScenarioRecord {
    let mut session = SessionContext::new(scenario.id.clone());
    let mut latency = 0.0;
    let mut cost = 0.0;
    let mut llm_calls = 0;
    let mut last = None;
    let mut error = None;
    for turn in &scenario.turns {
        session.push_user(turn.clone());
        let started = Instant::now();
        let out = agent.respond(&mut session);
        latency += started.elapsed().as_secs_f64();
        match out {
            Ok(o) => {
                cost += o.diagnostics.cost_usd;
                llm_calls += o.diagnostics.llm_calls;
                last = Some(o);
            }
            Err(e) => {
                error = Some(e.to_string());
                last = None;
                break;
            }
        }
    }
    let transcript = last
        .as_ref()
        .map(|o| Transcript {
            tools_called: o.diagnostics.tools_called.iter().map(|t| t.name.clone()).collect(),
            text: o.text.clone(),
            has_report: o.report.is_some(),
        })
        .unwrap_or_default();
    let score = score_response(scenario, &transcript);
    let parse = match (&scenario.expected_parse, &last) {
        (Some(e), Some(o)) => parsed_fields(&o.diagnostics.tools_called)
            .map(|p| parse_score(e, &p))
            .filter(|p| p.compared > 0),
        _ => None,
    };
    let total = score.total();
    ScenarioRecord {
        id: scenario.id.clone(),
        category: scenario.category,
        adversarial: scenario.adversarial,
        turns: scenario.turns.len(),
        action_correct: score.s_action == 1.0,
        tools_called: transcript.tools_called,
        final_text: transcript.text,
        has_report: transcript.has_report,
        escalated: last.as_ref().is_some_and(|o| o.escalation.is_some()),
        score,
        total,
        passed: total >= threshold && error.is_none(),
        parse,
        latency_s: latency,
        requests: scenario.turns.len(),
        llm_calls,
        cost_usd: cost,
        error,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub n: usize,
    pub tsa_pct: f64,
    pub pa_pct: Option<f64>,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMetrics {
    pub scenarios: usize,
    pub tsa_pct: f64,
    /// None when no scenario had scored parse fields.
    pub pa_pct: Option<f64>,
    pub pa_scenarios: usize,
    pub mean_latency_s: f64,
    pub total_cost_usd: f64,
    pub cost_per_scenario_usd: f64,
    pub mean_score: f64,
    pub passed: usize,
    pub pass_rate_pct: f64,
    pub per_category: BTreeMap<Category, CategoryMetrics>,
}

fn pa(records: &[&ScenarioRecord]) -> (Option<f64>, usize) {
    let scored: Vec<ParseScore> = records.iter().filter_map(|r| r.parse).collect();
    let compared: usize = scored.iter().map(|p| p.compared).sum();
    let matched: usize = scored.iter().map(|p| p.matched).sum();
    ((compared > 0).then(|| 100.0 * matched as f64 / compared as f64), scored.len())
}

fn summarize(records: &[&ScenarioRecord]) -> (f64, f64) {
    let n = records.len() as f64;
    let tsa = 100.0 * records.iter().filter(|r| r.action_correct).count() as f64 / n;
    let mean = records.iter().map(|r| r.total).sum::<f64>() / n;
    (tsa, mean)
}

pub fn aggregate(records: &[ScenarioRecord]) -> Result<BenchmarkMetrics, BenchError> {
    if records.is_empty() {
        return Err(BenchError::Empty);
    }
    let all: Vec<&ScenarioRecord> = records.iter().collect();
    let (tsa_pct, mean_score) = summarize(&all);
    let (pa_pct, pa_scenarios) = pa(&all);
    let mut by_cat: BTreeMap<Category, Vec<&ScenarioRecord>> = BTreeMap::new();
    for r in records {
        by_cat.entry(r.category).or_default().push(r);
    }
    let per_category = by_cat
        .into_iter()
        .map(|(c, rs)| {
            let (tsa, mean) = summarize(&rs);
            (
                c,
                CategoryMetrics {
                    n: rs.len(),
                    tsa_pct: tsa,
                    pa_pct: pa(&rs).0,
                    mean_score: mean,
                },
            )
        })
        .collect();
    let requests: usize = records.iter().map(|r| r.requests).sum();
    let total_cost: f64 = records.iter().map(|r| r.cost_usd).sum();
    let passed = records.iter().filter(|r| r.passed).count();
    Ok(BenchmarkMetrics {
        scenarios: records.len(),
        tsa_pct,
        pa_pct,
        pa_scenarios,
        mean_latency_s: records.iter().map(|r| r.latency_s).sum::<f64>() / requests.max(1) as f64,
        total_cost_usd: total_cost,
        cost_per_scenario_usd: total_cost / records.len() as f64,
        mean_score,
        passed,
        pass_rate_pct: 100.0 * passed as f64 / records.len() as f64,
        per_category,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub suite: String,
    pub model_id: Option<String>,
    pub threshold: f64,
    pub timestamp: DateTime<Utc>,
    pub lessons: usize,
    pub metrics: BenchmarkMetrics,
    pub records: Vec<ScenarioRecord>,
}

impl BenchmarkRun {
    pub fn failed(&self) -> impl Iterator<Item = &ScenarioRecord> {
        self.records.iter().filter(|r| !r.passed)
    }
}

/// Replays every scenario through the agent. `parallel > 1` splits the suite
/// across threads; only use it with scripted models, since live latency
/// numbers are then meaningless.
pub fn run_benchmark(
    suite_name: &str,
    scenarios: &[Scenario],
    agent: &Agent,
    threshold: f64,
    parallel: usize,
) -> Result<BenchmarkRun, BenchError> {
    if scenarios.is_empty() {
        return Err(BenchError::Empty);
    }
    let records: Vec<ScenarioRecord> = if parallel > 1 {
        let chunk = scenarios.len().div_ceil(parallel);
        std::thread::scope(|s| {
            let handles: Vec<_> = scenarios
                .chunks(chunk)
                .map(|c| s.spawn(move || c.iter().map(|sc| run_scenario(agent, sc, threshold)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("scenario thread panicked")).collect()
        })
    } else {
        scenarios.iter().map(|s| run_scenario(agent, s, threshold)).collect()
    };
    Ok(BenchmarkRun {
        suite: suite_name.to_string(),
        model_id: agent.model_id(),
        threshold,
        timestamp: Utc::now(),
        lessons: agent.lessons().len(),
        metrics: aggregate(&records)?,
        records,
    })
}

/// Writes the run as `<dir>/<suite>_<timestamp>.json`.
pub fn write_artifact(run: &BenchmarkRun, dir: &Path) -> Result<PathBuf, BenchError> {
    let io = |source| BenchError::Io {
        path: dir.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(io)?;
    let path = dir.join(format!("{}_{}.json", run.suite, run.timestamp.format("%Y%m%dT%H%M%S%.3fZ")));
    let text = serde_json::to_string_pretty(run).expect("run serializes");
    fs::write(&path, text).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub unique_a: usize,
    pub unique_b: usize,
    pub intersection: usize,
    pub shared: Vec<String>,
}

pub fn check_suite_disjointness(a: &Suite, b: &Suite) -> OverlapReport {
    let ta = a.unique_turns();
    let tb = b.unique_turns();
    let shared: Vec<String> = ta.intersection(&tb).map(|s| s.to_string()).collect();
    OverlapReport {
        unique_a: ta.len(),
        unique_b: tb.len(),
        intersection: shared.len(),
        shared,
    }
}

pub const OPTIMIZER_PROMPT: &str = "You review failed evaluation scenarios of a power-system interconnection assistant. \
For each pattern of failure, write one concise, actionable lesson the assistant should follow in future conversations. \
Reply with at most {max} lessons, one per line, with no preamble.";

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("optimizer model failed: {0}")]
    Llm(#[from] LlmError),
    #[error("lesson store: {0}")]
    Store(#[from] MemoryError),
}

/// Splits optimizer output into lesson candidates, dropping list markers.
pub fn parse_lessons(text: &str, max: usize) -> Vec<String> {
    static MARKER: OnceLock<Regex> = OnceLock::new();
    let marker = MARKER.get_or_init(|| Regex::new(r"^\s*(?:[-*\u{2022}]|\d+[.)])\s*").unwrap());
    text.lines()
        .map(|l| marker.replace(l, "").trim().to_string())
        .filter(|l| !l.is_empty())
        .take(max)
        .collect()
}

fn describe_failure(s: &Scenario, r: &ScenarioRecord) -> String {
    format!(
        "Scenario {} ({}):\n  user turns: {}\n  expected tool: {}\n  tools called: {}\n  score: {:.1}\n  response: {}",
        s.id,
        s.category.as_str(),
        s.turns.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join(" then "),
        s.expected_tool,
        if r.tools_called.is_empty() { "none".into() } else { r.tools_called.join(", ") },
        r.total,
        r.final_text.replace('\n', " ")
    )
}

/// One optimizer request for the batch of failures; lessons go to the store.
pub fn optimize_lessons(
    failures: &[(&Scenario, &ScenarioRecord)],
    optimizer: &dyn ChatModel,
    store: &LessonStore,
    max_lessons: usize,
) -> Result<Vec<Lesson>, OptimizeError> {
    if failures.is_empty() {
        return Ok(vec![]);
    }
    let body: Vec<String> = failures.iter().map(|(s, r)| describe_failure(s, r)).collect();
    let msgs = [
        Message::system(OPTIMIZER_PROMPT.replace("{max}", &max_lessons.to_string())),
        Message::user(body.join("\n\n")),
    ];
    let resp = optimizer.chat(&msgs, &[])?;
    let sources: Vec<String> = failures.iter().map(|(s, _)| s.id.clone()).collect();
    let mut added = Vec::new();
    for text in parse_lessons(resp.content.as_deref().unwrap_or(""), max_lessons) {
        if let Some(l) = store.append(&text, sources.clone())? {
            added.push(l);
        }
    }
    Ok(added)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub passed: usize,
    pub total: usize,
    pub pass_rate_pct: f64,
    pub mean_score: f64,
    pub failed_ids: Vec<String>,
    pub lessons_added: Vec<String>,
    pub optimizer_error: Option<String>,
}

/// Evaluate, optimize lessons from failures, repeat. The agent must share the
/// lesson store so later iterations see earlier lessons.
pub fn self_correct(
    suite: &Suite,
    agent: &Agent,
    optimizer: &dyn ChatModel,
    iterations: usize,
    threshold: f64,
    max_lessons: usize,
) -> Result<Vec<IterationReport>, BenchError> {
    let mut reports = Vec::new();
    for iteration in 1..=iterations {
        let run = run_benchmark(&suite.name, &suite.scenarios, agent, threshold, 1)?;
        let failures: Vec<(&Scenario, &ScenarioRecord)> = suite
            .scenarios
            .iter()
            .zip(&run.records)
            .filter(|(_, r)| !r.passed)
            .collect();
        let mut report = IterationReport {
            iteration,
            passed: run.metrics.passed,
            total: run.metrics.scenarios,
            pass_rate_pct: run.metrics.pass_rate_pct,
            mean_score: run.metrics.mean_score,
            failed_ids: failures.iter().map(|(s, _)| s.id.clone()).collect(),
            lessons_added: vec![],
            optimizer_error: None,
        };
        if iteration < iterations {
            match optimize_lessons(&failures, optimizer, agent.lessons(), max_lessons) {
                Ok(ls) => report.lessons_added = ls.into_iter().map(|l| l.text).collect(),
                Err(e) => report.optimizer_error = Some(e.to_string()),
            }
        }
        reports.push(report);
    }
    Ok(reports)
}
