//! Seeded scenario generation for the benchmark and regression suites, and
//! the fully-correct oracle script used to replay them with a scripted model.

use std::collections::HashSet;

use cia_grid::{load_case, ConnectionType};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bench::{Category, ExpectedParse, Scenario, Suite, ABSTAIN, DEFAULT_THRESHOLD};
use crate::guardrails::{
    classify_capacity_question, extract_context_hints, is_cia_like, missing_required_inputs, ContextHints, RequestKind,
};
use crate::llm::{LlmResponse, Message, ToolCall};
use crate::scripted::{LookupEntry, Script};
use crate::tools::REFERENCE_BACKEND;

pub const BENCHMARK_SEED: u64 = 2026;
pub const REGRESSION_SEED: u64 = 56;
pub const BENCHMARK_NAME: &str = "benchmark50";
pub const REGRESSION_NAME: &str = "selfcorrect56";

const MW_CHOICES: [f64; 12] = [10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 50.0, 60.0, 75.0, 80.0, 100.0];
const MVAR_CHOICES: [f64; 6] = [10.0, 15.0, 20.0, 25.0, 30.0, 40.0];

const GEN_PHRASES: [(ConnectionType, &str); 6] = [
    (ConnectionType::Solar, "solar farm"),
    (ConnectionType::Solar, "PV plant"),
    (ConnectionType::Wind, "wind farm"),
    (ConnectionType::Bess, "battery storage system"),
    (ConnectionType::Bess, "BESS"),
    (ConnectionType::Solar, "photovoltaic plant"),
];

/// Conceptual questions with reference answers and the keyword scored for each.
pub const THEORY: [(&str, &str, &str); 9] = [
    (
        "What does N-1 contingency analysis mean?",
        "N-1 contingency analysis removes one element at a time, such as a line, transformer or generator, and checks that the remaining network stays within emergency limits after each outage.",
        "outage",
    ),
    (
        "Why do inverter-based resources need a short-circuit ratio screen?",
        "Inverter controls need a sufficiently strong grid. The short-circuit ratio compares the short-circuit strength available at the bus with the plant rating, and a low ratio flags a weak connection point that needs detailed study.",
        "short-circuit",
    ),
    (
        "What is the difference between normal and emergency ratings?",
        "Normal ratings apply to continuous operation with every element in service, while emergency ratings are the short-term limits accepted after a contingency. The emergency voltage band is also wider than the normal band.",
        "emergency",
    ),
    (
        "Explain what a slack bus does in a power flow.",
        "The slack bus fixes the voltage angle reference and absorbs the power imbalance left after all scheduled injections and losses are accounted for.",
        "slack",
    ),
    (
        "How does a connection impact assessment decide between approve and reject?",
        "The assessment runs its stages in order. A hard violation or a failed stage rejects the request, violations inside the tolerance band make it borderline, and a clean pass through every required stage approves it.",
        "stage",
    ),
    (
        "What is a borderline violation?",
        "A borderline violation is a limit breach that stays inside the tolerance band around the limit. It is reported for engineering review but does not reject a request on its own.",
        "tolerance",
    ),
    (
        "Why are transient stability checks only run for some projects?",
        "The transient stage is part of the escalation for generation projects, especially inverter-based resources, while plain loads normally stop after the steady-state and contingency stages.",
        "escalation",
    ),
    (
        "What is the purpose of a PTDF in redispatch?",
        "A power transfer distribution factor gives the sensitivity of a branch flow to shifting power between two buses, so the redispatch heuristic can pick the generator moves that relieve an overload effectively.",
        "sensitivity",
    ),
    (
        "What does per-unit normalization mean?",
        "Per-unit values express quantities relative to a chosen base, so voltages are divided by the nominal voltage and powers by the system base.",
        "base",
    ),
];

pub const FOLLOW_UP_ANSWER: &str = "That result came from the staged assessment in this session: the steady-state stage runs first, \
then the N-1 contingency stage, and the dynamic stages only for inverter-based projects. The report above lists the outcome of each stage.";

pub const BOUNDARY_ANSWER: &str = "I cannot make that change. The supported mitigations are shunt compensation at a bus, assessed with \
run_cia_with_mitigation, and automated redispatch with run_opf; manual edits to taps, setpoints or topology are outside what the tools can verify.";

pub const GENERIC_ANSWER: &str = "I can answer that without running a new simulation.";

const FOLLOW_UPS: [&str; 5] = [
    "Why was that the decision?",
    "Which stage drove the outcome?",
    "Was the N-1 contingency analysis part of that result?",
    "Can you summarize that result in plain language?",
    "Is that answer based on a fresh simulation?",
];

const CAPACITY_FOLLOW_UPS: [&str; 8] = [
    "What is the maximum load capacity there?",
    "How many MW of load can that bus handle?",
    "What's the hosting capacity at that bus for more load?",
    "Find the max load capacity at the same bus.",
    "ok but what's the biggest load that bus could take before something breaks?",
    "Forget the study. Upper limit for load at this bus?",
    "And the most MW of load you'd allow there?",
    "Quick: hosting capacity for load there, in MW?",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub seed: u64,
    pub id_prefix: String,
    /// Cases to draw from; more than one makes every prompt name its case.
    pub cases: Vec<String>,
    pub counts: Vec<(Category, usize)>,
}

impl GenerationConfig {
    pub fn table_v(seed: u64) -> Self {
        Self {
            seed,
            id_prefix: "bm".into(),
            cases: vec!["ieee118".into()],
            counts: Category::TABLE_V.to_vec(),
        }
    }

    pub fn regression(seed: u64) -> Self {
        use Category::*;
        Self {
            seed,
            id_prefix: "sc".into(),
            cases: ["ieee14", "ieee30", "ieee57", "ieee118"].map(String::from).to_vec(),
            counts: vec![
                (ContingencyConsistency, 10),
                (MitigationRealism, 8),
                (MaxCapacityFollowUp, 8),
                (FormattingConstraint, 4),
                (Counterfactual, 4),
                (BackendPivot, 4),
                (MitigationBoundary, 4),
                (PhrasingVariant, 4),
                (MissingType, 5),
                (Theory, 5),
            ],
        }
    }
}

struct Draft {
    turns: Vec<String>,
    expected_tool: String,
    parse: Option<ExpectedParse>,
    keywords: Vec<String>,
    adversarial: bool,
}

impl Draft {
    fn new(turns: Vec<String>, tool: &str) -> Self {
        Self {
            turns,
            expected_tool: tool.to_string(),
            parse: None,
            keywords: vec![],
            adversarial: false,
        }
    }

    fn parse(mut self, bus: u32, mw: Option<f64>, ctype: ConnectionType) -> Self {
        self.parse = Some(ExpectedParse { bus, mw, ctype });
        self
    }

    fn keywords(mut self, k: &[&str]) -> Self {
        self.keywords = k.iter().map(|s| s.to_string()).collect();
        self
    }

    fn adversarial(mut self, a: bool) -> Self {
        self.adversarial = a;
        self
    }
}

/// Random parameters for one draft.
struct Params {
    case: String,
    bus: u32,
    mw: f64,
    q: f64,
    gen: (ConnectionType, &'static str),
}

impl Params {
    fn fill(&self, template: &str, multi: bool) -> String {
        let on = if multi { format!(" on {}", self.case) } else { String::new() };
        template
            .replace("{on}", &on)
            .replace("{case}", &self.case)
            .replace("{bus}", &self.bus.to_string())
            .replace("{mw}", &self.mw.to_string())
            .replace("{q}", &self.q.to_string())
            .replace("{gen}", self.gen.1)
    }
}

struct Generator {
    rng: ChaCha8Rng,
    cases: Vec<(String, Vec<u32>)>,
    used: HashSet<String>,
    multi: bool,
}

impl Generator {
    fn new(cfg: &GenerationConfig) -> Self {
        let cases = cfg
            .cases
            .iter()
            .map(|c| {
                let case = load_case(c).expect("generation uses builtin cases");
                let slack = case.slack_bus().id;
                let buses = case.load_buses().into_iter().filter(|b| *b != slack).map(|b| b.0).collect();
                (c.clone(), buses)
            })
            .collect();
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cases,
            used: HashSet::new(),
            multi: cfg.cases.len() > 1,
        }
    }

    fn params(&mut self) -> Params {
        let (case, buses) = self.cases.choose(&mut self.rng).expect("at least one case");
        let case = case.clone();
        let bus = *buses.choose(&mut self.rng).expect("case has load buses");
        Params {
            case,
            bus,
            mw: *MW_CHOICES.choose(&mut self.rng).unwrap(),
            q: *MVAR_CHOICES.choose(&mut self.rng).unwrap(),
            gen: GEN_PHRASES[self.rng.random_range(0..GEN_PHRASES.len())],
        }
    }

    fn draft(&mut self, cat: Category, i: usize) -> Draft {
        use Category::*;
        let p = self.params();
        let m = self.multi;
        let f = |t: &str| p.fill(t, m);
        let pick = |ts: &[&str]| f(ts[i % ts.len()]);
        let bus_kw = format!("bus {}", p.bus);
        let load = ConnectionType::Load;
        match cat {
            CompleteLoad => Draft::new(
                vec![pick(&[
                    "Connect a {mw} MW load at bus {bus}.",
                    "Please run a CIA for a {mw} MW data center load at bus {bus} on {case}.",
                    "I want to interconnect {mw} MW of industrial load at bus {bus}. Is that acceptable?",
                    "Assess adding a {mw} MW load to bus {bus}.",
                    "Evaluate a new {mw} MW factory load connecting at bus {bus}.",
                    "Hook up a {mw} MW EV charging load at bus {bus} and tell me the impact.",
                    "Run the connection impact assessment for a {mw} MW load at bus {bus}.",
                    "We plan to add {mw} MW of electrolyzer load at bus {bus}; please study it.",
                ])],
                "run_cia",
            )
            .parse(p.bus, Some(p.mw), load)
            .keywords(&[&bus_kw, "decision"]),
            CompleteGeneration => Draft::new(
                vec![pick(&[
                    "Connect a {mw} MW {gen} at bus {bus}.",
                    "Assess a {mw} MW {gen} interconnecting at bus {bus}.",
                    "Please evaluate adding a {mw} MW {gen} at bus {bus}.",
                    "Run a CIA for a {mw} MW {gen} at bus {bus}.",
                    "We want to interconnect a {mw} MW {gen} at bus {bus}.",
                    "Evaluate a {mw} MW {gen} at bus {bus} on {case}.",
                    "Install a {mw} MW {gen} at bus {bus}; what is the impact?",
                    "Check the impact of connecting a {mw} MW {gen} at bus {bus}.",
                ])],
                "run_cia",
            )
            .parse(p.bus, Some(p.mw), p.gen.0)
            .keywords(&[&bus_kw, "decision"]),
            MissingBus => Draft::new(
                vec![pick(&[
                    "Connect a {mw} MW load to the grid{on}.",
                    "I want to add {mw} MW of solar{on}. Please assess it.",
                    "Evaluate a {mw} MW wind farm interconnection{on}.",
                    "Run a CIA for a {mw} MW battery{on}.",
                    "Assess connecting {mw} MW of data center load{on}.",
                ])],
                ABSTAIN,
            )
            .keywords(&["bus"]),
            MissingMw => Draft::new(
                vec![pick(&[
                    "Connect a solar farm at bus {bus}{on}.",
                    "Assess a new load at bus {bus}{on}.",
                    "Evaluate adding a wind farm at bus {bus}{on}.",
                    "Run a CIA for a battery at bus {bus}{on}.",
                    "I want to interconnect a data center at bus {bus}{on}.",
                ])],
                ABSTAIN,
            )
            .keywords(&["MW"]),
            MissingType => Draft::new(
                vec![pick(&[
                    "Connect {mw} MW at bus {bus}{on}.",
                    "Assess a {mw} MW connection at bus {bus}{on}.",
                    "Evaluate adding {mw} MW at bus {bus}{on}.",
                    "Run a CIA for {mw} MW at bus {bus}{on}.",
                    "Please study interconnecting {mw} MW at bus {bus}{on}.",
                ])],
                ABSTAIN,
            )
            .keywords(&["type"]),
            MultiTurn => {
                let (turns, ctype) = match i % 6 {
                    0 => (vec![f("Connect {mw} MW at bus {bus}."), f("It is a {gen}.")], p.gen.0),
                    1 => (vec![f("Assess a {mw} MW {gen}."), f("Use bus {bus}.")], p.gen.0),
                    2 => (vec![f("Evaluate adding a load at bus {bus}."), f("{mw} MW.")], load),
                    3 => (vec![f("Run a CIA for a {gen} at bus {bus}."), f("Make it {mw} MW.")], p.gen.0),
                    4 => (vec![f("I want to interconnect {mw} MW of load."), f("Bus {bus}, please.")], load),
                    _ => (vec![f("Connect a {mw} MW generator at bus {bus}."), f("It's a {gen}.")], p.gen.0),
                };
                Draft::new(turns, "run_cia").parse(p.bus, Some(p.mw), ctype).keywords(&[&bus_kw])
            }
            FollowUp => {
                let first = if i % 2 == 0 {
                    f("Run a study for a {mw} MW load at bus {bus}.")
                } else {
                    f("Evaluate connecting a {mw} MW {gen} at bus {bus}.")
                };
                Draft::new(vec![first, FOLLOW_UPS[i % FOLLOW_UPS.len()].to_string()], ABSTAIN).keywords(&["stage"])
            }
            EdgeCase => {
                let (text, kw) = match i % 4 {
                    0 => (f("Connect a {mw} MW load at bus 999."), "bus 999".to_string()),
                    1 => (f("Assess a 0 MW load at bus {bus}."), bus_kw.clone()),
                    2 => (f("Connect a 5000 MW load at bus {bus}."), bus_kw.clone()),
                    _ => (f("Evaluate adding a 2 GW data center load at bus {bus}."), bus_kw.clone()),
                };
                Draft::new(vec![text], "run_cia").keywords(&[&kw])
            }
            Theory => {
                let offset = if m { 4 } else { 0 };
                let (q, _, kw) = THEORY[(offset + i) % THEORY.len()];
                Draft::new(vec![q.to_string()], ABSTAIN).keywords(&[kw])
            }
            ContingencyConsistency => {
                let (t, ctype) = [
                    ("On {case}, run a full impact study including N-1 for a {mw} MW load at bus {bus}.", load),
                    ("Check whether a {mw} MW {gen} at bus {bus} on {case} stays secure under single outages.", p.gen.0),
                    ("Assess {mw} MW of load at bus {bus} on {case} and confirm the contingency results are consistent.", load),
                    ("Evaluate a {mw} MW {gen} at bus {bus} on {case}; include the N-1 contingency stage.", p.gen.0),
                    ("Run a CIA on {case} for a {mw} MW load at bus {bus}, with contingency screening.", load),
                ][i % 5];
                Draft::new(vec![f(t)], "run_cia")
                    .parse(p.bus, Some(p.mw), ctype)
                    .keywords(&["contingency"])
            }
            MitigationRealism => {
                let first = if i % 2 == 0 {
                    f("For {case}, assess a {mw} MW load at bus {bus}.")
                } else {
                    f("Evaluate connecting {mw} MW of load to bus {bus} on {case}.")
                };
                let second = pick(&[
                    "Rerun that study with a {q} MVAr shunt capacitor at bus {bus}.",
                    "Now add {q} MVAr of shunt compensation at bus {bus} and check again.",
                    "What if we install a {q} MVAr capacitor bank at bus {bus}?",
                    "Repeat the assessment with {q} MVAr of reactive support at bus {bus}.",
                ]);
                Draft::new(vec![first, second], "run_cia_with_mitigation")
                    .parse(p.bus, Some(p.mw), load)
                    .keywords(&["mitigation"])
            }
            MaxCapacityFollowUp => {
                let first = if i % 2 == 0 {
                    f("Assess a {mw} MW load at bus {bus} on {case}.")
                } else {
                    f("Run a CIA for {mw} MW of load at bus {bus} on {case}.")
                };
                Draft::new(vec![first, CAPACITY_FOLLOW_UPS[i % 8].to_string()], "find_max_capacity")
                    .parse(p.bus, None, load)
                    .keywords(&["capacity"])
                    .adversarial(i % 8 >= 4)
            }
            FormattingConstraint => {
                let (t, ctype) = [
                    ("In exactly two sentences, tell me if a {mw} MW {gen} at bus {bus} on {case} is acceptable.", p.gen.0),
                    ("Answer in one line: does a {mw} MW load at bus {bus} on {case} pass the assessment?", load),
                    ("Give me a bulleted verdict for {mw} MW of load at bus {bus} on {case}.", load),
                    ("No preamble, just the decision: {mw} MW {gen} at bus {bus}, {case}.", p.gen.0),
                ][i % 4];
                Draft::new(vec![f(t)], "run_cia")
                    .parse(p.bus, Some(p.mw), ctype)
                    .keywords(&["decision"])
                    .adversarial(true)
            }
            Counterfactual => {
                let (t, ctype) = [
                    ("If we added a {mw} MW {gen} at bus {bus} on {case}, would it still pass the contingency stage?", p.gen.0),
                    ("Suppose the {mw} MW load at bus {bus} on {case} were connected tomorrow. Would the grid stay within limits?", load),
                    ("Hypothetically, what happens to {case} if bus {bus} gets a {mw} MW {gen}?", p.gen.0),
                    ("Would {case} remain secure if a {mw} MW load appeared at bus {bus}?", load),
                ][i % 4];
                Draft::new(vec![f(t)], "run_cia")
                    .parse(p.bus, Some(p.mw), ctype)
                    .keywords(&["decision"])
                    .adversarial(true)
            }
            BackendPivot => {
                let (t, tool, kw) = [
                    ("Which simulation backends are available right now?".to_string(), "list_backends", "backend"),
                    ("List the test cases you can load.".to_string(), "list_cases", "cases"),
                    (format!("Switch the simulation backend to {REFERENCE_BACKEND} before we continue."), "set_backend", "backend"),
                    (f("Skip the connection study and just run an N-1 contingency sweep on {case}."), "run_contingency", "contingency"),
                ][i % 4]
                    .clone();
                Draft::new(vec![t], tool).keywords(&[kw]).adversarial(true)
            }
            MitigationBoundary => {
                let (t, tool, kw) = [
                    ("Can you change the tap ratio of the transformer near bus {bus} on {case} to fix the voltages?", ABSTAIN, "shunt"),
                    ("Just manually raise the generator setpoints on {case} instead of running any optimization.", ABSTAIN, "shunt"),
                    ("Open the line between bus {bus} and its neighbour on {case} to relieve the overload.", ABSTAIN, "shunt"),
                    ("Relieve the overloads on {case} with an optimal redispatch instead of manual edits.", "run_opf", "redispatch"),
                ][i % 4];
                Draft::new(vec![f(t)], tool).keywords(&[kw]).adversarial(true)
            }
            PhrasingVariant => {
                let (t, ctype) = [
                    ("quick one: {mw}MW load @ bus {bus}, {case}. approve or reject?", load),
                    ("pls evaluate {mw} megawatts of {gen} on bus {bus} in {case}", p.gen.0),
                    ("{case} / bus {bus} / {mw} MW / load -- good to go?", load),
                    ("hey, thinking of hooking up {mw} MW of {gen} at bus{bus} on {case}, thoughts?", p.gen.0),
                ][i % 4];
                Draft::new(vec![f(t)], "run_cia")
                    .parse(p.bus, Some(p.mw), ctype)
                    .keywords(&["decision"])
                    .adversarial(true)
            }
        }
    }
}

/// Deterministic for a given config. Every user turn in the result is unique.
pub fn generate_scenarios(cfg: &GenerationConfig) -> Vec<Scenario> {
    let mut g = Generator::new(cfg);
    let mut out = Vec::new();
    for &(cat, count) in &cfg.counts {
        for i in 0..count {
            let mut draft = None;
            for _ in 0..500 {
                let d = g.draft(cat, i);
                let distinct: HashSet<&String> = d.turns.iter().collect();
                if distinct.len() == d.turns.len() && d.turns.iter().all(|t| !g.used.contains(t)) {
                    draft = Some(d);
                    break;
                }
            }
            let draft = draft.unwrap_or_else(|| panic!("cannot draw a unique {} scenario", cat.as_str()));
            g.used.extend(draft.turns.iter().cloned());
            out.push(Scenario {
                id: format!("{}-{}-{:02}", cfg.id_prefix, cat.as_str(), i + 1),
                category: cat,
                turns: draft.turns,
                expected_tool: draft.expected_tool,
                expected_parse: draft.parse,
                content_keywords: draft.keywords,
                score_threshold: DEFAULT_THRESHOLD,
                adversarial: draft.adversarial,
            });
        }
    }
    out
}

pub fn benchmark_suite() -> Suite {
    Suite {
        name: BENCHMARK_NAME.into(),
        scenarios: generate_scenarios(&GenerationConfig::table_v(BENCHMARK_SEED)),
    }
}

pub fn regression_suite() -> Suite {
    Suite {
        name: REGRESSION_NAME.into(),
        scenarios: generate_scenarios(&GenerationConfig::regression(REGRESSION_SEED)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Capacity,
    Clarification,
    Llm,
}

/// Which path the agent takes for the last user turn of `history`.
pub fn gate_for(history: &[Message]) -> Gate {
    if classify_capacity_question(history).is_capacity() {
        Gate::Capacity
    } else if is_cia_like(history) && !missing_required_inputs(history, RequestKind::Cia).is_empty() {
        Gate::Clarification
    } else {
        Gate::Llm
    }
}

pub fn oracle_answer(category: Category, question: &str) -> &'static str {
    if let Some((_, a, _)) = THEORY.iter().find(|(q, _, _)| *q == question) {
        return a;
    }
    match category {
        Category::FollowUp => FOLLOW_UP_ANSWER,
        Category::MitigationBoundary => BOUNDARY_ANSWER,
        _ => GENERIC_ANSWER,
    }
}

fn connection_args(h: &ContextHints, case: &str) -> Value {
    json!({
        "case_path": case,
        "connection": {
            "bus": h.bus.map(|b| b.0),
            "capacity_mw": h.p_mw,
            "type": h.ctype.map(|t| t.as_str()),
        }
    })
}

/// Arguments and the follow-up summary a correct model would produce.
pub fn oracle_call(tool: &str, h: &ContextHints) -> (Value, String) {
    let case = h.case_alias.clone().unwrap_or_else(|| "ieee118".into());
    let conn = |h: &ContextHints| {
        format!(
            "{} MW {} at bus {} on {case}",
            h.p_mw.map(|p| p.to_string()).unwrap_or_default(),
            h.ctype.map(|t| t.as_str()).unwrap_or(""),
            h.bus.map(|b| b.0.to_string()).unwrap_or_default()
        )
    };
    match tool {
        "run_cia" => (
            connection_args(h, &case),
            format!(
                "Decision for the {}: {{{{/payload/decision|/error}}}}. The report lists each stage outcome, starting with the steady-state stage.",
                conn(h)
            ),
        ),
        "run_cia_with_mitigation" => {
            let mut args = connection_args(h, &case);
            args["mitigations"] = serde_json::to_value(&h.mitigations).expect("mitigations serialize");
            (
                args,
                format!(
                    "Decision for the {} with the shunt mitigation: {{{{/payload/decision|/error}}}}. Mitigations applied: {{{{/payload/mitigations_applied}}}}. The steady-state stage was rechecked with the compensation in place.",
                    conn(h)
                ),
            )
        }
        "list_backends" => (
            json!({}),
            "Available simulation backends: {{/payload/backends}}; the active backend is {{/payload/active}}.".into(),
        ),
        "list_cases" => (json!({}), "The builtin test cases I can load are {{/payload/cases}}.".into()),
        "set_backend" => (
            json!({"backend": REFERENCE_BACKEND}),
            "Backend switch result: the active backend is now {{/payload/active|/error}}.".into(),
        ),
        "run_contingency" => (
            json!({"case_path": case}),
            format!("The N-1 contingency sweep on {case} finished: {{{{/payload/failed|/error}}}} of {{{{/payload/checked}}}} outages failed."),
        ),
        "run_opf" => (
            json!({"case_path": case}),
            format!("The optimal redispatch on {case} finished; converged: {{{{/payload/converged|/error}}}}. Residual overloads are listed in the result."),
        ),
        "run_powerflow" | "inspect_violations" | "query_network_data" => (
            json!({"case_path": case}),
            format!("The {tool} result for {case} is ready; converged: {{{{/payload/converged|/error}}}}."),
        ),
        other => (json!({}), format!("The {other} call finished.")),
    }
}

/// Lookup script that answers every LLM-routed turn of the suite correctly.
pub fn oracle_script(suite: &Suite) -> Script {
    let mut entries = Vec::new();
    for (si, s) in suite.scenarios.iter().enumerate() {
        let mut history = Vec::new();
        for (ti, turn) in s.turns.iter().enumerate() {
            history.push(Message::user(turn.clone()));
            if gate_for(&history) == Gate::Llm {
                let hints = extract_context_hints(&history);
                let last = ti + 1 == s.turns.len();
                let complete = hints.bus.is_some() && hints.p_mw.is_some() && hints.ctype.is_some();
                let tool = if last {
                    s.expected_tool.as_str()
                } else if complete {
                    "run_cia"
                } else {
                    ABSTAIN
                };
                if tool == ABSTAIN {
                    entries.push(LookupEntry {
                        user: turn.clone(),
                        round: 0,
                        system_contains: None,
                        response: LlmResponse::text(oracle_answer(s.category, turn)),
                    });
                } else {
                    let (arguments, summary) = oracle_call(tool, &hints);
                    entries.push(LookupEntry {
                        user: turn.clone(),
                        round: 0,
                        system_contains: None,
                        response: LlmResponse::calls(vec![ToolCall {
                            id: format!("call_{si}_{ti}"),
                            name: tool.to_string(),
                            arguments,
                        }]),
                    });
                    entries.push(LookupEntry {
                        user: turn.clone(),
                        round: 1,
                        system_contains: None,
                        response: LlmResponse::text(summary),
                    });
                }
            }
            history.push(Message::assistant(""));
        }
    }
    Script::Lookup { entries }
}

pub fn script_to_json_pretty(script: &Script) -> String {
    let mut s = serde_json::to_string_pretty(script).expect("script serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_counts_give_empty_set() {
        let mut cfg = GenerationConfig::table_v(1);
        for c in &mut cfg.counts {
            c.1 = 0;
        }
        assert!(generate_scenarios(&cfg).is_empty());
    }

    #[test]
    fn same_seed_same_set() {
        let a = generate_scenarios(&GenerationConfig::table_v(7));
        let b = generate_scenarios(&GenerationConfig::table_v(7));
        assert_eq!(a, b);
    }
}
