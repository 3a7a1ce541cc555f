mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use cia_core::agent::{Agent, AgentConfig, Route, SessionContext, MEMORY_CAVEAT};
use cia_core::guardrails::GROUNDING_DISCLAIMER;
use cia_core::lessons::LessonStore;
use cia_core::llm::{LlmEndpoint, LlmResponse, OpenAiClient, Role, ToolCall};
use cia_core::pipeline::Decision;
use cia_core::scripted::{ScriptStep, ScriptedLlm};
use proptest::prelude::*;
use regex::Regex;
use serde_json::{json, Value};

fn call(id: &str, name: &str, args: Value) -> LlmResponse {
    LlmResponse::calls(vec![ToolCall {
        id: id.into(),
        name: name.into(),
        arguments: args,
    }])
}

fn step(resp: LlmResponse) -> ScriptStep {
    ScriptStep {
        expect_last_role: None,
        expect_contains: None,
        system_contains: None,
        response: resp,
    }
}

fn ask(agent: &Agent, text: &str) -> (SessionContext, cia_core::agent::TurnOutput) {
    let mut s = SessionContext::new("t");
    s.push_user(text);
    let out = agent.respond(&mut s).unwrap();
    (s, out)
}

fn small_range() -> AgentConfig {
    AgentConfig {
        capacity_mw_min: 0.0,
        capacity_mw_max: 40.0,
        capacity_tol_mw: 5.0,
        ..AgentConfig::default()
    }
}

fn numbers_in_json(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Number(n) => {
            let f = n.as_f64().unwrap();
            out.insert(format!("{f:.2}"));
            out.insert(format!("{f}"));
        }
        Value::Array(a) => a.iter().for_each(|x| numbers_in_json(x, out)),
        Value::Object(o) => o.values().for_each(|x| numbers_in_json(x, out)),
        _ => {}
    }
}

#[test]
fn capacity_question_skips_the_model() {
    let (agent, llm) = common::scripted_agent(ScriptedLlm::sequential(vec![]));
    let (_, out) = ask(&agent, "max load at bus 14 on ieee118?");
    assert_eq!(llm.calls(), 0);
    assert_eq!(out.diagnostics.route, Route::CapacityForced);
    let cap = out.capacity.expect("capacity result");
    assert_eq!(cap.bus.0, 14);
    assert!(cap.iterations <= 9);

    // every number in the summary is a field of the result
    let mut allowed = BTreeSet::new();
    numbers_in_json(&serde_json::to_value(&cap).unwrap(), &mut allowed);
    let num = Regex::new(r"\b\d+(?:\.\d+)?\b").unwrap();
    for m in num.find_iter(&out.text) {
        assert!(allowed.contains(m.as_str()), "{} not in result: {}", m.as_str(), out.text);
    }
    assert_eq!(agent.tools().memory().len(), 1);
}

#[test]
fn best_bus_question_skips_the_model() {
    let llm = Arc::new(ScriptedLlm::sequential(vec![]));
    let agent = Agent::new(common::registry(), Some(llm.clone()), Arc::new(LessonStore::in_memory()), small_range());
    let (_, out) = ask(&agent, "Which bus on ieee14 can host the most load?");
    assert_eq!(llm.calls(), 0);
    assert_eq!(out.diagnostics.route, Route::BestBusForced);
    let best = out.best_bus.unwrap();
    let b = best.best.unwrap();
    assert_eq!(best.candidates[0].bus, b.bus);
    assert_eq!(best.candidates.iter().filter(|c| c.max_approved_mw.is_some()).count(), 3);
    assert!(out.text.contains(&format!("bus {}", b.bus.0)));
}

#[test]
fn missing_type_asks_instead_of_running() {
    let (agent, llm) = common::scripted_agent(ScriptedLlm::sequential(vec![]));
    let (_, out) = ask(&agent, "connect 50 MW at bus 10");
    assert_eq!(out.diagnostics.route, Route::Clarification);
    assert!(out.diagnostics.tools_called.is_empty());
    assert_eq!(llm.calls(), 0);
    assert!(out.text.contains("type"));
    assert!(out.report.is_none());
}

#[test]
fn scripted_cia_returns_the_report_and_is_exempt() {
    let (agent, llm) = common::scripted_agent(ScriptedLlm::sequential(vec![
        step(call(
            "c1",
            "run_cia",
            json!({"case_path": "ieee14", "connection": {"bus": 9, "capacity_mw": 20, "type": "load"}}),
        )),
        ScriptStep {
            expect_last_role: Some(Role::Tool),
            expect_contains: Some("\"decision\"".into()),
            system_contains: None,
            response: LlmResponse::text("The 20 MW load at bus 9 is {{/payload/decision}} after the steady-state stage."),
        },
    ]));
    let (session, out) = ask(&agent, "Connect a 20 MW load at bus 9 on ieee14.");
    let report = out.report.expect("report");
    assert_eq!(llm.calls(), 2);
    assert!(out.diagnostics.analytic_tool_called);
    assert!(!out.diagnostics.disclaimer_added);
    assert!(out.text.contains(report.decision.as_str()));
    assert_eq!(session.last_report.as_ref(), Some(&report));
    assert_eq!(agent.tools().memory().len(), 1);
    assert_eq!(session.history.len(), 2);
}

#[test]
fn six_tool_rounds_stop_at_five() {
    let steps = (0..6).map(|i| step(call(&format!("c{i}"), "list_cases", json!({})))).collect();
    let (agent, llm) = common::scripted_agent(ScriptedLlm::sequential(steps));
    let (_, out) = ask(&agent, "Tell me everything about the cases.");
    assert_eq!(llm.calls(), 5);
    assert_eq!(llm.remaining(), 1);
    assert_eq!(out.diagnostics.tools_called.len(), 5);
    assert!(out.escalation.is_some());
    assert!(out.text.contains("escalated"));
}

#[test]
fn fabricated_number_without_tools_gets_disclaimer() {
    let (agent, _) = common::scripted_agent(ScriptedLlm::sequential(vec![step(LlmResponse::text(
        "Bus 14 can accept up to 127 MW of new load.",
    ))]));
    let (_, out) = ask(&agent, "Tell me about bus 14 on ieee118.");
    assert!(out.diagnostics.disclaimer_added);
    assert!(out.text.ends_with(GROUNDING_DISCLAIMER));
}

#[test]
fn non_analytic_tools_do_not_exempt_the_scan() {
    let (agent, _) = common::scripted_agent(ScriptedLlm::sequential(vec![
        step(call("c1", "list_cases", json!({}))),
        step(LlmResponse::text("Bus 14 on ieee118 can take about 127 MW.")),
    ]));
    let (_, out) = ask(&agent, "What cases do you have and how strong is bus 14?");
    assert!(!out.diagnostics.analytic_tool_called);
    assert!(out.diagnostics.disclaimer_added);
}

#[test]
fn standard_limits_pass_the_scan() {
    let (agent, _) = common::scripted_agent(ScriptedLlm::sequential(vec![step(LlmResponse::text(
        "Under normal conditions bus voltages should stay between 0.95 and 1.05 pu, and branches below 100% of their rating.",
    ))]));
    let (_, out) = ask(&agent, "What are the normal operating limits?");
    assert!(!out.diagnostics.disclaimer_added, "{:?}", out.diagnostics.grounding_findings);
}

#[test]
fn tool_errors_go_back_to_the_model() {
    let (agent, llm) = common::scripted_agent(ScriptedLlm::sequential(vec![
        step(call(
            "c1",
            "run_cia",
            json!({"case_path": "ieee14", "connection": {"bus": 99, "capacity_mw": 20, "type": "load"}}),
        )),
        ScriptStep {
            expect_last_role: Some(Role::Tool),
            expect_contains: Some("99".into()),
            system_contains: None,
            response: LlmResponse::text("Bus 99 does not exist in this case; please pick another bus."),
        },
    ]));
    let (_, out) = ask(&agent, "Connect a 20 MW load at bus 99 on ieee14.");
    assert_eq!(llm.calls(), 2);
    assert!(!out.diagnostics.tools_called[0].ok);
    assert!(out.report.is_none());
}

#[test]
fn unreachable_endpoint_abstains() {
    let client = OpenAiClient::new(LlmEndpoint {
        base_url: "http://127.0.0.1:9/v1".into(),
        model: "m".into(),
        api_key: None,
        timeout_s: 2.0,
    })
    .unwrap();
    let agent = common::agent_with(Some(Arc::new(client)));
    let (_, out) = ask(&agent, "Explain what a slack bus is.");
    let esc = out.escalation.expect("escalation");
    assert!(esc.escalate);
    assert!(esc.reason.contains("llm"));
    assert!(!out.text.contains("slack bus fixes"));
}

#[test]
fn no_model_configured_abstains() {
    let agent = common::agent_with(None);
    let (_, out) = ask(&agent, "Explain what a slack bus is.");
    assert!(out.escalation.is_some());
}

#[test]
fn memory_reaches_the_next_prompt_with_caveat() {
    let (agent, llm) = common::scripted_agent(ScriptedLlm::sequential(vec![
        step(call(
            "c1",
            "run_cia",
            json!({"case_path": "ieee14", "connection": {"bus": 9, "capacity_mw": 20, "type": "load"}}),
        )),
        step(LlmResponse::text("Decision: {{/payload/decision}}.")),
        ScriptStep {
            expect_last_role: Some(Role::User),
            expect_contains: None,
            system_contains: Some(MEMORY_CAVEAT.into()),
            response: LlmResponse::text("That came from the study above."),
        },
    ]));
    let mut s = SessionContext::new("m");
    s.push_user("Connect a 20 MW load at bus 9 on ieee14.");
    agent.respond(&mut s).unwrap();
    s.push_user("Where did that answer come from?");
    agent.respond(&mut s).unwrap();
    assert_eq!(llm.calls(), 3);
    assert!(MEMORY_CAVEAT.contains("earlier simulations in the current session"));
}

#[test]
fn scripted_runs_are_deterministic() {
    let script = || {
        ScriptedLlm::sequential(vec![
            step(call(
                "c1",
                "run_cia",
                json!({"case_path": "ieee30", "connection": {"bus": 7, "capacity_mw": 30, "type": "wind"}}),
            )),
            step(LlmResponse::text("Decision: {{/payload/decision}}; reasons {{/payload/reason_codes}}.")),
        ])
    };
    let run = || {
        let (agent, _) = common::scripted_agent(script());
        let (_, out) = ask(&agent, "Assess a 30 MW wind farm at bus 7 on ieee30.");
        let mut r = out.report.unwrap();
        r.timestamp = Default::default();
        (out.text, r)
    };
    assert_eq!(run(), run());
}

#[test]
fn history_must_end_with_user() {
    let agent = common::agent_with(None);
    let mut s = SessionContext::new("x");
    assert!(agent.respond(&mut s).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn capacity_questions_never_reach_the_model(bus in 2u32..14, phrase in 0usize..4) {
        let text = [
            format!("What is the maximum load capacity at bus {bus} on ieee14?"),
            format!("How much load can bus {bus} on ieee14 handle?"),
            format!("hosting capacity for load at bus {bus}, ieee14"),
            format!("Largest load we could put at bus {bus} on ieee14?"),
        ][phrase].clone();
        let llm = Arc::new(ScriptedLlm::sequential(vec![]));
        let agent = Agent::new(common::registry(), Some(llm.clone()), Arc::new(LessonStore::in_memory()), small_range());
        let (_, out) = ask(&agent, &text);
        prop_assert_eq!(llm.calls(), 0);
        prop_assert!(out.capacity.is_some());
    }

    #[test]
    fn clarifications_run_no_tools(bus in 1u32..118, mw in 1u32..300, missing in 0usize..3) {
        let text = match missing {
            0 => format!("Connect {mw} MW at bus {bus}."),
            1 => format!("Assess a solar farm at bus {bus}."),
            _ => format!("Evaluate adding a {mw} MW wind farm."),
        };
        let (agent, llm) = common::scripted_agent(ScriptedLlm::sequential(vec![]));
        let (_, out) = ask(&agent, &text);
        prop_assert_eq!(out.diagnostics.route, Route::Clarification);
        prop_assert!(out.diagnostics.tools_called.is_empty());
        prop_assert_eq!(llm.calls(), 0);
    }

    #[test]
    fn rounds_never_exceed_five(k in 0usize..9) {
        let mut steps: Vec<ScriptStep> = (0..k).map(|i| step(call(&format!("c{i}"), "list_backends", json!({})))).collect();
        steps.push(step(LlmResponse::text("Done listing backends.")));
        let (agent, llm) = common::scripted_agent(ScriptedLlm::sequential(steps));
        let (_, out) = ask(&agent, "Which backends do you have?");
        prop_assert!(out.diagnostics.llm_calls <= 5);
        prop_assert_eq!(llm.calls(), (k + 1).min(5));
        prop_assert_eq!(out.escalation.is_some(), k >= 5);
    }
}

#[test]
fn decision_helpers() {
    assert!(Decision::Borderline.is_feasible());
}
