#![allow(dead_code)]

pub mod fixtures;

use std::sync::Arc;

use cia_core::agent::{Agent, AgentConfig};
use cia_core::lessons::LessonStore;
use cia_core::llm::ChatModel;
use cia_core::memory::StudyMemory;
use cia_core::pipeline::PipelineConfig;
use cia_core::scripted::ScriptedLlm;
use cia_core::tools::ToolRegistry;

pub fn registry() -> Arc<ToolRegistry> {
    Arc::new(ToolRegistry::new(Arc::new(StudyMemory::in_memory()), PipelineConfig::default()))
}

pub fn agent_with(llm: Option<Arc<dyn ChatModel>>) -> Agent {
    Agent::new(registry(), llm, Arc::new(LessonStore::in_memory()), AgentConfig::default())
}

pub fn scripted_agent(llm: ScriptedLlm) -> (Agent, Arc<ScriptedLlm>) {
    let llm = Arc::new(llm);
    (agent_with(Some(llm.clone())), llm)
}

use cia_grid::{parse_matpower_case, GridCase};
use num_complex::Complex64;

pub fn case(text: &str) -> GridCase {
    parse_matpower_case(text).expect("fixture parses")
}

/// Dense admittance matrix accumulated branch by branch.
pub fn dense_ybus(case: &GridCase) -> Vec<Vec<Complex64>> {
    let n = case.buses.len();
    let pos = |id| case.buses.iter().position(|b| b.id == id).unwrap();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for br in case.branches.iter().filter(|b| b.in_service) {
        let (f, t) = (pos(br.from_bus), pos(br.to_bus));
        let ys = Complex64::new(br.r, br.x).inv();
        let half_b = Complex64::new(0.0, br.b_charging / 2.0);
        let a = Complex64::from_polar(br.tap, br.shift_deg.to_radians());
        y[f][f] += (ys + half_b) / (a * a.conj());
        y[t][t] += ys + half_b;
        y[f][t] -= ys / a.conj();
        y[t][f] -= ys / a;
    }
    for s in &case.shunts {
        let i = pos(s.bus);
        y[i][i] += Complex64::new(s.g_mw, s.q_mvar) / case.base_mva;
    }
    y
}

/// Receiving-end voltage of a lossless line fed at 1 pu, serving P + jQ
/// (per unit) with a capacitive shunt of `b_sh` pu at the load end.
/// The shunt is folded in by fixed-point iteration on |V|.
pub fn radial_voltage(p: f64, q: f64, x: f64, b_sh: f64) -> Complex64 {
    let mut vm: f64 = 1.0;
    for _ in 0..200 {
        let qe = q - b_sh * vm * vm;
        let a = 1.0 - 2.0 * qe * x;
        let disc = a * a - 4.0 * x * x * (p * p + qe * qe);
        assert!(disc >= 0.0, "past the nose of the PV curve");
        vm = ((a + disc.sqrt()) / 2.0).sqrt();
    }
    let delta = (p * x / vm).asin();
    Complex64::from_polar(vm, -delta)
}

/// Sending-end apparent power (pu) of the same line.
pub fn radial_sending_s(p: f64, q: f64, x: f64, b_sh: f64) -> f64 {
    let v2 = radial_voltage(p, q, x, b_sh);
    let i = (Complex64::new(1.0, 0.0) - v2) / Complex64::new(0.0, x);
    i.conj().norm()
}

/// Two buses: slack at 1, load at 2, joined by `lines` identical lossless lines.
pub fn radial_case(pd: f64, qd: f64, x: f64, lines: usize, rate_a: f64, rate_b: f64) -> GridCase {
    let branches: String = (0..lines)
        .map(|_| format!("1 2 0 {x} 0 {rate_a} {rate_b} 0 0 0 1;\n"))
        .collect();
    case(&format!(
        "mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
2 1 {pd} {qd} 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [1 0 0 999 -999 1 100 1 999 0];
mpc.branch = [
{branches}];"
    ))
}

use cia_core::bench::{run_benchmark, BenchmarkRun, Suite, DEFAULT_THRESHOLD};
use cia_core::llm::{LlmResponse, ToolCall};
use cia_core::scenarios::{benchmark_suite, oracle_script, regression_suite};
use cia_core::scripted::{LookupEntry, Script, ScriptStep};
use serde_json::json;

/// Three load, two generation, one multi-turn and two edge scenarios.
pub const WRONG_TOOL_IDS: [&str; 8] = [
    "bm-complete_load-02",
    "bm-complete_load-05",
    "bm-complete_load-07",
    "bm-complete_generation-03",
    "bm-complete_generation-06",
    "bm-multi_turn-04",
    "bm-edge_case-01",
    "bm-edge_case-03",
];

/// Oracle script with the first tool call of the given scenarios' final
/// turns swapped for a power flow.
pub fn script_with_wrong_tool(ids: &[&str]) -> Script {
    let suite = benchmark_suite();
    let Script::Lookup { mut entries } = oracle_script(&suite) else { unreachable!() };
    for id in ids {
        let s = suite.scenarios.iter().find(|s| s.id == *id).unwrap();
        let last = s.turns.last().unwrap();
        let e = entries.iter_mut().find(|e| &e.user == last && e.round == 0).unwrap();
        e.response = LlmResponse::calls(vec![ToolCall {
            id: "wrong".into(),
            name: "run_powerflow".into(),
            arguments: json!({"case_path": "ieee118"}),
        }]);
    }
    Script::Lookup { entries }
}

pub fn run_benchmark50(script: Script) -> BenchmarkRun {
    let (agent, _) = scripted_agent(ScriptedLlm::new(script));
    let suite = benchmark_suite();
    run_benchmark(&suite.name, &suite.scenarios, &agent, DEFAULT_THRESHOLD, 1).unwrap()
}

pub const LESSON: &str = "Answer conceptual questions directly and name the key quantity involved.";

/// A slice of the regression suite that needs no simulation runs.
pub fn selfcorrect_slice() -> Suite {
    let full = regression_suite();
    let scenarios = full
        .scenarios
        .into_iter()
        .filter(|s| s.category.as_str() == "theory" || s.category.as_str() == "missing_type")
        .collect();
    Suite {
        name: "selfcorrect-slice".into(),
        scenarios,
    }
}

/// The oracle script, except that `target` gets a vague answer until the
/// system prompt carries the lesson.
pub fn lesson_aware_script(suite: &Suite, target: &str) -> ScriptedLlm {
    let Script::Lookup { mut entries } = oracle_script(suite) else {
        unreachable!()
    };
    let turn = suite.scenarios.iter().find(|s| s.id == target).unwrap().turns[0].clone();
    let good = entries.iter().position(|e| e.user == turn).unwrap();
    let right = entries[good].response.clone();
    entries[good].response = LlmResponse::text("That depends on many things.");
    entries.push(LookupEntry {
        user: turn,
        round: 0,
        system_contains: Some(LESSON.into()),
        response: right,
    });
    ScriptedLlm::lookup(entries)
}

pub fn lesson_optimizer(lessons: &[&str]) -> ScriptedLlm {
    ScriptedLlm::sequential(
        lessons
            .iter()
            .map(|l| ScriptStep {
                expect_last_role: None,
                expect_contains: None,
                system_contains: Some("failed evaluation scenarios".into()),
                response: LlmResponse::text(*l),
            })
            .collect(),
    )
}
