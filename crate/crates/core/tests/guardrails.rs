mod common;

use cia_core::guardrails::{
    classify_capacity_question, clarification_prompt, extract_context_hints, grounding_scan, has_ungrounded_numerics,
    is_cia_like, missing_required_inputs, CapacityFamily, PatternKind, RequestKind, RequiredField,
    GROUNDING_DISCLAIMER,
};
use cia_core::llm::Message;
use cia_grid::{BusId, ConnectionType, ShuntMitigation};
use proptest::prelude::*;

use common::fixtures::{BEST_BUS, CONTROLS, FABRICATION, SPECIFIC_BUS, STANDARD_LIMITS};

fn hist(turns: &[&str]) -> Vec<Message> {
    turns.iter().map(|t| Message::user(*t)).collect()
}

#[test]
fn capacity_fixture_full_recall() {
    for (q, bus) in SPECIFIC_BUS {
        let c = classify_capacity_question(&hist(&[q]));
        assert_eq!(c.family, CapacityFamily::SpecificBus, "{q}");
        assert_eq!(c.bus, Some(BusId(bus)), "{q}");
        assert!(!c.matched_phrases.is_empty());
    }
    for q in BEST_BUS {
        let c = classify_capacity_question(&hist(&[q]));
        assert_eq!(c.family, CapacityFamily::BestBus, "{q}");
    }
}

#[test]
fn control_fixture_no_false_positives() {
    for q in CONTROLS {
        let c = classify_capacity_question(&hist(&[q]));
        assert_eq!(c.family, CapacityFamily::None, "{q}: {:?}", c.matched_phrases);
    }
}

#[test]
fn deictic_bus_resolves_from_earlier_turns() {
    let h = hist(&["Run a CIA for 40 MW solar at bus 9", "What's the maximum solar it can host?"]);
    // a bare pronoun is not enough to route
    assert_eq!(classify_capacity_question(&h).family, CapacityFamily::None);
    let h = hist(&["Run a CIA for 40 MW solar at bus 9", "What's the maximum solar capacity at that bus?"]);
    let c = classify_capacity_question(&h);
    assert_eq!(c.family, CapacityFamily::SpecificBus);
    assert_eq!(c.bus, Some(BusId(9)));
    // capacity intent without any bus is not routed
    assert_eq!(classify_capacity_question(&hist(&["What is the max capacity?"])).family, CapacityFamily::None);
    assert_eq!(classify_capacity_question(&[]).family, CapacityFamily::None);
}

struct HintCase {
    turns: &'static [&'static str],
    bus: Option<u32>,
    mw: Option<f64>,
    ctype: Option<ConnectionType>,
}

const fn hc(turns: &'static [&'static str], bus: Option<u32>, mw: Option<f64>, ctype: Option<ConnectionType>) -> HintCase {
    HintCase { turns, bus, mw, ctype }
}

use ConnectionType::{Bess, Hybrid, Load, Solar, Synchronous, Wind};

// Hand-labeled utterances. Types only count for explicit keywords or
// load-indicative terms.
const HINTS: &[HintCase] = &[
    hc(&["I want solar at bus 14", "make it 50 MW"], Some(14), Some(50.0), Some(Solar)),
    hc(&["100 MW at bus 3", "actually bus 7"], Some(7), Some(100.0), None),
    hc(&["Connect 50 MW at bus 10"], Some(10), Some(50.0), None),
    hc(&["Connect a 50 MW data center at bus 10"], Some(10), Some(50.0), Some(Load)),
    hc(&["Connect a solar farm at bus 10"], Some(10), None, Some(Solar)),
    hc(&["Add 75MW of wind to bus 22"], Some(22), Some(75.0), Some(Wind)),
    hc(&["A 1.5 GW load at bus 59"], Some(59), Some(1500.0), Some(Load)),
    hc(&["Install 500 kW of PV at bus 2"], Some(2), Some(0.5), Some(Solar)),
    hc(&["Battery storage, 20 MW, bus 13"], Some(13), Some(20.0), Some(Bess)),
    hc(&["solar-plus-storage of 60 MW at bus 8"], Some(8), Some(60.0), Some(Hybrid)),
    hc(&["A 40 MW gas turbine at bus 6"], Some(6), Some(40.0), Some(Synchronous)),
    hc(&["Run a load flow on ieee14"], None, None, None),
    hc(&["What happens at bus 12?"], Some(12), None, None),
    hc(&["Connect 25.5 MW of photovoltaic at bus #4"], Some(4), Some(25.5), Some(Solar)),
    hc(&["We plan 1,200 MW of wind", "at bus 80"], Some(80), Some(1200.0), Some(Wind)),
    hc(&["bus 5", "30 MW", "electrolyzer"], Some(5), Some(30.0), Some(Load)),
    hc(&["Solar at bus 9", "no wait, make it wind"], Some(9), None, Some(Wind)),
    hc(&["An EV charging hub of 12 MW at bus 11"], Some(11), Some(12.0), Some(Load)),
    hc(&["A 300 megawatt hydro plant at bus 100"], Some(100), Some(300.0), Some(Synchronous)),
    hc(&["Connect 50 MW at bus 10", "it's a factory"], Some(10), Some(50.0), Some(Load)),
    hc(&["Connect 50 MW at bus 10", "what about bus 11?"], Some(11), Some(50.0), None),
    hc(&["Evaluate 80 MW BESS at bus 30 on ieee57"], Some(30), Some(80.0), Some(Bess)),
    hc(&["wind speed at bus 4 is high"], Some(4), None, None),
    hc(&["Is load shedding needed at bus 9?"], Some(9), None, None),
    hc(&["A 10 MW datacenter on bus 7"], Some(7), Some(10.0), Some(Load)),
    hc(&["A 10 MW data centre on bus 7"], Some(7), Some(10.0), Some(Load)),
    hc(&["hybrid plant 45 MW bus 16"], Some(16), Some(45.0), Some(Hybrid)),
    hc(&["Rerun 30 MW load at bus 14 with +20 MVAr at bus 4"], Some(14), Some(30.0), Some(Load)),
    hc(&["Put 2 GW of solar at bus 69"], Some(69), Some(2000.0), Some(Solar)),
    hc(&["diesel backup, 5 MW at bus 3"], Some(3), Some(5.0), Some(Synchronous)),
    hc(&["A synchronous condenser-style unit at bus 8 of 15 MW"], Some(8), Some(15.0), Some(Synchronous)),
    hc(&["Start with 10 MW", "no, 20 MW", "of storage at bus 5"], Some(5), Some(20.0), Some(Bess)),
];

#[test]
fn hint_fixture() {
    let utterances: usize = HINTS.iter().map(|c| c.turns.len()).sum();
    assert!(utterances >= 30);
    for c in HINTS {
        let h = extract_context_hints(&hist(c.turns));
        assert_eq!(h.bus, c.bus.map(BusId), "{:?}", c.turns);
        assert_eq!(h.p_mw, c.mw, "{:?}", c.turns);
        assert_eq!(h.ctype, c.ctype, "{:?}", c.turns);
    }
    assert_eq!(extract_context_hints(&[]), Default::default());
}

#[test]
fn hints_pick_up_case_and_mitigations() {
    let h = extract_context_hints(&hist(&["Run 30 MW load at bus 14 on ieee57", "add 25 MVAr at bus 9"]));
    assert_eq!(h.case_alias.as_deref(), Some("ieee57"));
    assert_eq!(h.mitigations, vec![ShuntMitigation { bus: BusId(9), q_mvar: 25.0 }]);
    assert_eq!(h.bus, Some(BusId(14)));
    assert_eq!(extract_context_hints(&hist(&["the 118-bus system"])).case_alias.as_deref(), Some("ieee118"));
}

#[test]
fn required_inputs() {
    let m = |t: &[&str], k| missing_required_inputs(&hist(t), k);
    assert_eq!(m(&["Connect 50 MW at bus 10"], RequestKind::Cia), vec![RequiredField::Type]);
    assert!(m(&["Connect a 50 MW data center at bus 10"], RequestKind::Cia).is_empty());
    assert_eq!(m(&["Connect a solar farm at bus 10"], RequestKind::Cia), vec![RequiredField::Mw]);
    assert_eq!(m(&["Connect 50 MW of wind"], RequestKind::Cia), vec![RequiredField::Bus]);
    assert!(m(&["maximum solar at bus 10"], RequestKind::Capacity).is_empty());
    assert_eq!(m(&["maximum capacity at bus 10"], RequestKind::Capacity), vec![RequiredField::Type]);
    assert_eq!(m(&["best bus"], RequestKind::BestBus), vec![RequiredField::Type]);
    let prompt = clarification_prompt(&[RequiredField::Type], RequestKind::Cia);
    assert!(prompt.contains("load") && prompt.contains("solar"), "{prompt}");
}

#[test]
fn assessment_requests_are_recognized() {
    assert!(is_cia_like(&hist(&["Connect 50 MW at bus 10"])));
    assert!(is_cia_like(&hist(&["CIA for 20 MW wind at bus 3"])));
    assert!(!is_cia_like(&hist(&["What is a CIA?"])));
    assert!(!is_cia_like(&hist(&["Explain N-1 security."])));
}

#[test]
fn fabricated_number_gets_the_disclaimer() {
    let (findings, amended) = grounding_scan(FABRICATION, false);
    let f = findings.iter().find(|f| f.matched_text.contains("127")).expect("127 MW flagged");
    assert_eq!(f.pattern_kind, PatternKind::MwValue);
    assert!(!f.safe);
    assert!(f.context_window.chars().count() <= 150 + f.matched_text.chars().count());
    assert!(amended.starts_with(FABRICATION));
    assert!(amended.ends_with(GROUNDING_DISCLAIMER));
    assert!(has_ungrounded_numerics(FABRICATION, false));
}

#[test]
fn standard_limits_pass() {
    let (findings, amended) = grounding_scan(STANDARD_LIMITS, false);
    assert!(!findings.is_empty());
    assert!(findings.iter().all(|f| f.safe), "{findings:?}");
    assert_eq!(amended, STANDARD_LIMITS);
}

#[test]
fn analytic_turns_are_not_amended() {
    let (findings, amended) = grounding_scan(FABRICATION, true);
    assert!(findings.is_empty());
    assert_eq!(amended, FABRICATION);
    assert!(!has_ungrounded_numerics(FABRICATION, true));
}

#[test]
fn claim_patterns() {
    let kinds = |t: &str| grounding_scan(t, false).0.into_iter().map(|f| f.pattern_kind).collect::<Vec<_>>();
    assert!(kinds("The bus sits at 0.93 pu").contains(&PatternKind::PuValue));
    assert!(kinds("The line carries 250 MVA").contains(&PatternKind::MvaValue));
    assert!(kinds("It is loaded to 112%").contains(&PatternKind::PercentValue));
    assert!(kinds("The capacity is about 90").contains(&PatternKind::CapacityIs));
    assert!(kinds("Roughly 1,250 MW is possible").contains(&PatternKind::MwValue));
    // scientific notation is not conversational and is skipped
    assert!(kinds("1e3 MW").is_empty());
    assert!(kinds("No numbers here.").is_empty());
}

proptest! {
    #[test]
    fn classification_is_deterministic(text in ".{0,120}") {
        let h = hist(&[text.as_str()]);
        prop_assert_eq!(classify_capacity_question(&h), classify_capacity_question(&h));
        prop_assert_eq!(extract_context_hints(&h), extract_context_hints(&h));
    }

    #[test]
    fn scanning_is_idempotent(prefix in "[a-z ]{0,40}", n in 1u32..5000, unit in prop::sample::select(vec!["MW", "pu", "MVA", "%"])) {
        let text = format!("{prefix} {n} {unit}");
        let (_, once) = grounding_scan(&text, false);
        let (_, twice) = grounding_scan(&once, false);
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.matches(GROUNDING_DISCLAIMER).count() <= 1);
    }

    #[test]
    fn analytic_flag_always_exempts(text in ".{0,200}") {
        let (f, out) = grounding_scan(&text, true);
        prop_assert!(f.is_empty());
        prop_assert_eq!(out, text);
    }
}
