//! Deterministic checks that run before and after the language model:
//! capacity-question routing, required-input gates, context hints and the
//! grounding scan of final responses.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use cia_grid::{BusId, ConnectionType, ShuntMitigation};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::{Message, Role};
use crate::pipeline::Decision;

const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.tsv");

/// Appended to responses that state numbers no simulation produced.
pub const GROUNDING_DISCLAIMER: &str = "Note: the figures above did not come from a simulation run in this conversation \
and may be wrong. Ask me to run a power flow, an impact assessment or a capacity search to get verified values.";

/// Half-width of the context window around a numeric claim.
pub const WINDOW_HALF: usize = 75;

#[derive(Debug, thiserror::Error)]
#[error("lexicon line {line}: {message}")]
pub struct LexiconError {
    pub line: usize,
    pub message: String,
}

struct Phrase {
    text: String,
    re: Regex,
}

static INSTALLED: OnceLock<Lexicon> = OnceLock::new();

/// Phrase lists keyed by kind, loaded from a `kind<TAB>phrase` file.
pub struct Lexicon {
    kinds: HashMap<String, Vec<Phrase>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseMatch {
    pub kind: String,
    pub phrase: String,
    pub start: usize,
    pub end: usize,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut kinds: HashMap<String, Vec<Phrase>> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (kind, phrase) = line.split_once('\t').ok_or_else(|| LexiconError {
                line: i + 1,
                message: "expected kind<TAB>phrase".into(),
            })?;
            let phrase = phrase.trim().to_lowercase();
            if kind.is_empty() || phrase.is_empty() {
                return Err(LexiconError {
                    line: i + 1,
                    message: "empty kind or phrase".into(),
                });
            }
            let re = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(&phrase))).map_err(|e| LexiconError {
                line: i + 1,
                message: e.to_string(),
            })?;
            kinds.entry(kind.to_string()).or_default().push(Phrase { text: phrase, re });
        }
        Ok(Self { kinds })
    }

    pub fn builtin() -> &'static Lexicon {
        static LEX: OnceLock<Lexicon> = OnceLock::new();
        LEX.get_or_init(|| Lexicon::parse(BUILTIN_LEXICON).expect("bundled lexicon parses"))
    }

    /// The lexicon the classifiers use: an installed one if any, else the
    /// bundled list.
    pub fn active() -> &'static Lexicon {
        INSTALLED.get().unwrap_or_else(Self::builtin)
    }

    /// Replaces the bundled list for the rest of the process. Only the first
    /// call takes effect; returns false otherwise.
    pub fn install(lex: Lexicon) -> bool {
        INSTALLED.set(lex).is_ok()
    }

    pub fn phrases(&self, kind: &str) -> Vec<&str> {
        self.kinds.get(kind).map_or_else(Vec::new, |v| v.iter().map(|p| p.text.as_str()).collect())
    }

    pub fn find(&self, kind: &str, text: &str) -> Vec<PhraseMatch> {
        let mut out = Vec::new();
        for p in self.kinds.get(kind).into_iter().flatten() {
            for m in p.re.find_iter(text) {
                out.push(PhraseMatch {
                    kind: kind.to_string(),
                    phrase: p.text.clone(),
                    start: m.start(),
                    end: m.end(),
                });
            }
        }
        out.sort_by_key(|m| (m.start, std::cmp::Reverse(m.end)));
        out
    }

    pub fn contains(&self, kind: &str, text: &str) -> bool {
        self.kinds.get(kind).into_iter().flatten().any(|p| p.re.is_match(text))
    }
}

fn re(pattern: &str) -> Regex {
    Regex::new(pattern).expect("static pattern compiles")
}

fn number_pattern() -> &'static str {
    r"(\d{1,3}(?:,\d{3})+|\d+)(?:\.(\d+))?"
}

fn parse_number(int_part: &str, frac: Option<&str>) -> f64 {
    let mut s = int_part.replace(',', "");
    if let Some(f) = frac {
        s.push('.');
        s.push_str(f);
    }
    s.parse().unwrap_or(f64::NAN)
}

/// Rejects matches glued to a preceding identifier or mantissa (e.g. `1e3 MW`).
fn standalone(text: &str, start: usize) -> bool {
    text[..start]
        .chars()
        .next_back()
        .is_none_or(|c| !(c.is_alphanumeric() || c == '.' || c == '_'))
}

struct Patterns {
    mw: Regex,
    bus: Regex,
    case: Regex,
    mitig_a: Regex,
    mitig_b: Regex,
    deictic: Regex,
    pu: Regex,
    mva: Regex,
    percent: Regex,
    capacity_is: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let n = number_pattern();
        Patterns {
            mw: re(&format!(r"(?i){n}\s*(gw|mw|kw|gigawatts?|megawatts?|kilowatts?)\b")),
            bus: re(r"(?i)\bbus\s*(?:#|no\.?|number|-)?\s*(\d+)\b"),
            case: re(r"(?i)\b(?:ieee|case)[\s_-]*(14|30|57|118)\b|\b(14|30|57|118)[\s-]*bus\b"),
            mitig_a: re(&format!(r"(?i)([+-]?){n}\s*mvar\b[^.;\n]*?\bbus\s*(\d+)")),
            mitig_b: re(&format!(r"(?i)\bbus\s*(\d+)\b[^.;\n]{{0,30}}?([+-]?){n}\s*mvar\b")),
            deictic: re(r"(?i)\b(?:there|that bus|this bus|the same bus|same bus)\b"),
            pu: re(&format!(r"(?i){n}\s*(?:pu|p\.u\.)(?:\W|$)")),
            mva: re(&format!(r"(?i){n}\s*mvar?\b")),
            percent: re(&format!(r"(?i){n}\s*(?:%|percent\b)")),
            capacity_is: re(&format!(
                r"(?i)\bcapacity\s+(?:is|of|would be|will be)\s+(?:approximately\s+|about\s+|around\s+|roughly\s+|~\s*)?{n}"
            )),
        }
    })
}

/// Parameters mentioned in the conversation so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextHints {
    pub bus: Option<BusId>,
    pub p_mw: Option<f64>,
    pub ctype: Option<ConnectionType>,
    pub case_alias: Option<String>,
    #[serde(default)]
    pub mitigations: Vec<ShuntMitigation>,
    pub last_report_status: Option<Decision>,
}

impl ContextHints {
    pub fn is_ibr(&self) -> Option<bool> {
        self.ctype.map(ConnectionType::is_ibr)
    }

    /// Labeled lines for the system prompt.
    pub fn render(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "not given".into());
        let mut lines = vec![
            format!("bus: {}", opt(self.bus.map(|b| b.to_string()))),
            format!("power_mw: {}", opt(self.p_mw.map(|p| p.to_string()))),
            format!("connection_type: {}", opt(self.ctype.map(|c| c.to_string()))),
            format!("is_ibr: {}", opt(self.is_ibr().map(|b| b.to_string()))),
            format!("case: {}", opt(self.case_alias.clone())),
        ];
        if !self.mitigations.is_empty() {
            let m: Vec<String> = self.mitigations.iter().map(|m| format!("{} MVAr at bus {}", m.q_mvar, m.bus)).collect();
            lines.push(format!("mitigations: {}", m.join(", ")));
        }
        if let Some(s) = self.last_report_status {
            lines.push(format!("last_report_status: {s}"));
        }
        lines.join("\n")
    }
}

#[derive(Debug, Default)]
struct TurnHints {
    bus: Option<BusId>,
    p_mw: Option<f64>,
    ctype: Option<ConnectionType>,
    case_alias: Option<String>,
    mitigations: Vec<ShuntMitigation>,
}

fn type_from_kind(kind: &str) -> Option<ConnectionType> {
    kind.strip_prefix("type.")?.parse().ok()
}

/// Last explicit connection type in `text`. Overlapping matches resolve to
/// the longest phrase so "solar-plus-storage" reads as hybrid.
pub fn detect_type(text: &str) -> Option<ConnectionType> {
    let lex = Lexicon::active();
    let excluded = lex.find("type_exclude", text);
    let mut hits: Vec<(usize, usize, ConnectionType)> = Vec::new();
    for kind in ConnectionType::ALL.iter().map(|t| format!("type.{t}")) {
        let ctype = type_from_kind(&kind).expect("type kinds map to connection types");
        for m in lex.find(&kind, text) {
            if excluded.iter().any(|x| x.start <= m.start && m.end <= x.end) {
                continue;
            }
            hits.push((m.start, m.end, ctype));
        }
    }
    let dominated = |a: &(usize, usize, ConnectionType)| {
        hits.iter()
            .any(|b| b.0 <= a.0 && a.1 <= b.1 && (b.1 - b.0) > (a.1 - a.0))
    };
    hits.iter().filter(|h| !dominated(h)).max_by_key(|h| (h.0, h.1)).map(|h| h.2)
}

fn parse_turn(text: &str) -> TurnHints {
    let p = patterns();
    let mut out = TurnHints::default();
    let mut mitigation_spans = Vec::new();
    for caps in p.mitig_a.captures_iter(text) {
        let sign = if &caps[1] == "-" { -1.0 } else { 1.0 };
        let q = sign * parse_number(&caps[2], caps.get(3).map(|m| m.as_str()));
        let bus: u32 = caps[4].parse().unwrap_or(0);
        mitigation_spans.push(caps.get(0).map(|m| (m.start(), m.end())).unwrap());
        out.mitigations.push(ShuntMitigation { bus: BusId(bus), q_mvar: q });
    }
    for caps in p.mitig_b.captures_iter(text) {
        let whole = caps.get(0).unwrap();
        if mitigation_spans.iter().any(|&(s, e)| whole.start() < e && s < whole.end()) {
            continue;
        }
        let sign = if &caps[2] == "-" { -1.0 } else { 1.0 };
        let q = sign * parse_number(&caps[3], caps.get(4).map(|m| m.as_str()));
        let bus: u32 = caps[1].parse().unwrap_or(0);
        mitigation_spans.push((whole.start(), whole.end()));
        out.mitigations.push(ShuntMitigation { bus: BusId(bus), q_mvar: q });
    }
    let in_mitigation = |pos: usize| mitigation_spans.iter().any(|&(s, e)| s <= pos && pos < e);

    for caps in p.bus.captures_iter(text) {
        let m = caps.get(0).unwrap();
        if in_mitigation(m.start()) {
            continue;
        }
        if let Ok(n) = caps[1].parse::<u32>() {
            out.bus = Some(BusId(n));
        }
    }
    for caps in p.mw.captures_iter(text) {
        let m = caps.get(0).unwrap();
        if !standalone(text, m.start()) || in_mitigation(m.start()) {
            continue;
        }
        let v = parse_number(&caps[1], caps.get(2).map(|m| m.as_str()));
        let unit = caps[3].to_lowercase();
        let scale = if unit.starts_with('g') {
            1000.0
        } else if unit.starts_with('k') {
            0.001
        } else {
            1.0
        };
        out.p_mw = Some(v * scale);
    }
    for caps in p.case.captures_iter(text) {
        let n = caps.get(1).or(caps.get(2)).unwrap().as_str();
        out.case_alias = Some(format!("ieee{n}"));
    }
    out.ctype = detect_type(text);
    out
}

fn user_turns(history: &[Message]) -> impl Iterator<Item = &str> {
    history.iter().filter(|m| m.role == Role::User).map(|m| m.content.as_str())
}

/// Latest mention wins, scanning user turns in order.
pub fn extract_context_hints(history: &[Message]) -> ContextHints {
    let mut h = ContextHints::default();
    for text in user_turns(history) {
        let t = parse_turn(text);
        h.bus = t.bus.or(h.bus);
        h.p_mw = t.p_mw.or(h.p_mw);
        h.ctype = t.ctype.or(h.ctype);
        h.case_alias = t.case_alias.or(h.case_alias);
        for m in t.mitigations {
            if !h.mitigations.contains(&m) {
                h.mitigations.push(m);
            }
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityFamily {
    SpecificBus,
    BestBus,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityClassification {
    pub family: CapacityFamily,
    pub bus: Option<BusId>,
    pub matched_phrases: Vec<String>,
}

impl CapacityClassification {
    pub fn is_capacity(&self) -> bool {
        self.family != CapacityFamily::None
    }
}

fn capacity_intent(text: &str) -> Vec<String> {
    let lex = Lexicon::active();
    let mut hits: Vec<String> = lex.find("capacity", text).into_iter().map(|m| m.phrase).collect();
    for weak in lex.find("capacity_weak", text) {
        let tail: String = text[weak.end..].split_whitespace().take(4).collect::<Vec<_>>().join(" ");
        if lex.contains("power_term", &tail) {
            hits.push(weak.phrase);
        }
    }
    hits.dedup();
    hits
}

fn latest_user(history: &[Message]) -> Option<&str> {
    history.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str())
}

/// Classifies the latest user turn. Earlier turns only resolve deictic bus
/// references like "that bus".
pub fn classify_capacity_question(history: &[Message]) -> CapacityClassification {
    let none = CapacityClassification {
        family: CapacityFamily::None,
        bus: None,
        matched_phrases: vec![],
    };
    let Some(text) = latest_user(history) else {
        return none;
    };
    let intent = capacity_intent(text);
    if intent.is_empty() {
        return none;
    }
    let best: Vec<String> = Lexicon::active().find("best_bus", text).into_iter().map(|m| m.phrase).collect();
    let mut matched = intent;
    if !best.is_empty() {
        matched.extend(best);
        return CapacityClassification {
            family: CapacityFamily::BestBus,
            bus: None,
            matched_phrases: matched,
        };
    }
    let own = parse_turn(text).bus;
    let bus = own.or_else(|| {
        patterns()
            .deictic
            .is_match(text)
            .then(|| {
                let n = history.len() - history.iter().rev().position(|m| m.role == Role::User).unwrap() - 1;
                extract_context_hints(&history[..n]).bus
            })
            .flatten()
    });
    match bus {
        Some(b) => CapacityClassification {
            family: CapacityFamily::SpecificBus,
            bus: Some(b),
            matched_phrases: matched,
        },
        None => none,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequiredField {
    Bus,
    #[serde(rename = "MW")]
    Mw,
    Type,
}

impl fmt::Display for RequiredField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RequiredField::Bus => "bus",
            RequiredField::Mw => "MW",
            RequiredField::Type => "type",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Cia,
    Capacity,
    BestBus,
}

pub fn missing_required_inputs(history: &[Message], kind: RequestKind) -> Vec<RequiredField> {
    let h = extract_context_hints(history);
    let mut out = Vec::new();
    if kind != RequestKind::BestBus && h.bus.is_none() {
        out.push(RequiredField::Bus);
    }
    if kind == RequestKind::Cia && h.p_mw.is_none() {
        out.push(RequiredField::Mw);
    }
    if h.ctype.is_none() {
        out.push(RequiredField::Type);
    }
    out
}

/// Whether the latest user turn asks for an assessment.
pub fn is_cia_like(history: &[Message]) -> bool {
    let Some(text) = latest_user(history) else {
        return false;
    };
    let lex = Lexicon::active();
    if lex.contains("assess", text) {
        return true;
    }
    if lex.contains("assess_noun", text) {
        let t = parse_turn(text);
        return t.bus.is_some() || t.p_mw.is_some() || t.ctype.is_some();
    }
    false
}

pub fn clarification_prompt(missing: &[RequiredField], kind: RequestKind) -> String {
    let what = match kind {
        RequestKind::Cia => "run the connection impact assessment",
        RequestKind::Capacity => "search for the maximum capacity",
        RequestKind::BestBus => "search for the best bus",
    };
    let mut parts = Vec::new();
    for f in missing {
        parts.push(match f {
            RequiredField::Bus => "the bus number of the point of interconnection".to_string(),
            RequiredField::Mw => "the active power in MW".to_string(),
            RequiredField::Type => format!(
                "the connection type ({})",
                ConnectionType::ALL.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", ")
            ),
        });
    }
    format!("Before I {what} I need {}. I will not assume a value for anything that is missing.", join_list(&parts))
}

fn join_list(parts: &[String]) -> String {
    match parts {
        [] => String::new(),
        [a] => a.clone(),
        [a, b] => format!("{a} and {b}"),
        [rest @ .., last] => format!("{}, and {last}", rest.join(", ")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    MwValue,
    PuValue,
    MvaValue,
    PercentValue,
    CapacityIs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingFinding {
    pub matched_text: String,
    pub pattern_kind: PatternKind,
    pub context_window: String,
    pub safe: bool,
}

const SAFE_PU: [f64; 6] = [0.95, 1.05, 0.90, 1.10, 1.0, 0.01];
const SAFE_PERCENT: [f64; 3] = [100.0, 110.0, 5.0];

fn window(text: &str, start: usize, end: usize) -> String {
    let before: Vec<char> = text[..start].chars().rev().take(WINDOW_HALF).collect();
    let after: String = text[end..].chars().take(WINDOW_HALF).collect();
    let mut w: String = before.into_iter().rev().collect();
    w.push_str(&text[start..end]);
    w.push_str(&after);
    w
}

/// Scans for numeric claims. Responses of turns that ran an analytic tool
/// are returned unchanged.
pub fn grounding_scan(response: &str, analytic_tool_called: bool) -> (Vec<GroundingFinding>, String) {
    if analytic_tool_called {
        return (vec![], response.to_string());
    }
    let body = response.replace(GROUNDING_DISCLAIMER, "");
    let findings = scan_claims(&body);
    let mut amended = response.to_string();
    if findings.iter().any(|f| !f.safe) && !response.contains(GROUNDING_DISCLAIMER) {
        if !amended.is_empty() {
            amended.push_str("\n\n");
        }
        amended.push_str(GROUNDING_DISCLAIMER);
    }
    (findings, amended)
}

pub fn scan_claims(text: &str) -> Vec<GroundingFinding> {
    let p = patterns();
    let lex = Lexicon::active();
    let mut out = Vec::new();
    let kinds: [(&Regex, PatternKind); 5] = [
        (&p.mw, PatternKind::MwValue),
        (&p.pu, PatternKind::PuValue),
        (&p.mva, PatternKind::MvaValue),
        (&p.percent, PatternKind::PercentValue),
        (&p.capacity_is, PatternKind::CapacityIs),
    ];
    for (re, kind) in kinds {
        for caps in re.captures_iter(text) {
            let m = caps.get(0).unwrap();
            let num = caps.get(1);
            if kind != PatternKind::CapacityIs && !standalone(text, m.start()) {
                continue;
            }
            let value = num.map(|n| parse_number(n.as_str(), caps.get(2).map(|f| f.as_str())));
            let matched = m.as_str().trim_end_matches(|c: char| !c.is_alphanumeric() && c != '%' && c != '.');
            let w = window(text, m.start(), m.end());
            let constant = match (kind, value) {
                (PatternKind::PuValue, Some(v)) => SAFE_PU.iter().any(|c| (c - v).abs() < 1e-12),
                (PatternKind::PercentValue, Some(v)) => SAFE_PERCENT.iter().any(|c| (c - v).abs() < 1e-12),
                _ => false,
            };
            out.push(GroundingFinding {
                matched_text: matched.to_string(),
                pattern_kind: kind,
                safe: constant || lex.contains("safe", &w),
                context_window: w,
            });
        }
    }
    out
}

pub fn has_ungrounded_numerics(response: &str, analytic_tool_called: bool) -> bool {
    !analytic_tool_called && scan_claims(&response.replace(GROUNDING_DISCLAIMER, "")).iter().any(|f| !f.safe)
}
