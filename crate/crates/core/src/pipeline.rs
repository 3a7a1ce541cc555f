//! Four-stage connection impact assessment.
//!
//! f1 steady state, f2 N-1 contingency, f3 transient, f4 short-circuit
//! ratio. Stages run in order up to the escalation level of the request and
//! stop after the first failing stage.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::{Arc, OnceLock};

use chrono::{DateTime, Utc};
use cia_grid::inspector::ElementKind;
use cia_grid::powerflow::solve_ac_powerflow_from;
use cia_grid::transient::run_transient_with;
use cia_grid::{
    apply_outage, default_limits, inspect, n1_elements, redispatch, short_circuit_proxy, short_circuit_ratio,
    solve_ac_powerflow, BusId, ConnectionRequest, Element, FaultSpec, GridCase, PowerFlowOptions, PowerFlowSolution,
    Regime, Severity, ShuntMitigation, ToleranceBands, TransientParams, TransientResult, Violation, ViolationReport,
    ViolationType,
};
use serde::{Deserialize, Serialize};

use crate::error::CiaError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub enable_contingency: bool,
    pub enable_transient: bool,
    pub enable_emt: bool,
    pub scr_min: f64,
    pub worsening_threshold_pct: f64,
    pub fail_on_worsening: bool,
    pub transient_horizon_s: f64,
    pub transient_dt_s: f64,
    pub fault_t_on_s: f64,
    pub fault_t_off_s: f64,
    pub enable_opf_escalation: bool,
    /// Ignore steady-state violations already present without the project,
    /// unless the project worsens them by more than the tolerance band.
    pub baseline_aware_steady_state: bool,
    pub bands: ToleranceBands,
    pub pf: PowerFlowOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            enable_contingency: true,
            enable_transient: true,
            enable_emt: true,
            scr_min: 3.0,
            worsening_threshold_pct: 2.0,
            fail_on_worsening: false,
            transient_horizon_s: 10.0,
            transient_dt_s: 0.005,
            fault_t_on_s: 0.1,
            fault_t_off_s: 0.2,
            enable_opf_escalation: false,
            baseline_aware_steady_state: true,
            bands: ToleranceBands::default(),
            pf: PowerFlowOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CiaError> {
        if !(self.scr_min > 0.0) {
            return Err(CiaError::InvalidConfig(format!("scr_min must be positive, got {}", self.scr_min)));
        }
        if !(self.worsening_threshold_pct >= 0.0) {
            return Err(CiaError::InvalidConfig(format!(
                "worsening_threshold_pct must be non-negative, got {}",
                self.worsening_threshold_pct
            )));
        }
        if !(self.transient_horizon_s > 0.0 && self.transient_dt_s > 0.0) {
            return Err(CiaError::InvalidConfig("transient horizon and step must be positive".into()));
        }
        Ok(())
    }

    /// Only the steady-state stage: used for fast screening sweeps.
    pub fn steady_state_only(&self) -> Self {
        Self {
            enable_contingency: false,
            enable_transient: false,
            enable_emt: false,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    F1,
    F2,
    F3,
    F4,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::F1, Stage::F2, Stage::F3, Stage::F4];

    pub fn index(self) -> u8 {
        self as u8 + 1
    }

    pub fn title(self) -> &'static str {
        match self {
            Stage::F1 => "steady-state",
            Stage::F2 => "N-1 contingency",
            Stage::F3 => "transient stability",
            Stage::F4 => "short-circuit ratio",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.index())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageOutcome {
    Pass,
    Fail,
    Borderline,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Approve,
    Reject,
    Borderline,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Approve => "approve",
            Decision::Reject => "reject",
            Decision::Borderline => "borderline",
        }
    }

    /// Anything short of a rejection.
    pub fn is_feasible(self) -> bool {
        self != Decision::Reject
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCode {
    ConvergenceDivergence,
    SteadyStateViolation,
    SteadyStateBorderline,
    OpfEscalated,
    ContingencyFailure,
    ContingencyWorsening,
    TransientInstability,
    TransientIncomplete,
    LowScr,
}

impl ReasonCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasonCode::ConvergenceDivergence => "convergence_divergence",
            ReasonCode::SteadyStateViolation => "steady_state_violation",
            ReasonCode::SteadyStateBorderline => "steady_state_borderline",
            ReasonCode::OpfEscalated => "opf_escalated",
            ReasonCode::ContingencyFailure => "contingency_failure",
            ReasonCode::ContingencyWorsening => "contingency_worsening",
            ReasonCode::TransientInstability => "transient_instability",
            ReasonCode::TransientIncomplete => "transient_incomplete",
            ReasonCode::LowScr => "low_scr",
        }
    }
}

impl fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContingencyStatus {
    Secure,
    Violation,
    Diverged,
    IslandedLoad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyResult {
    pub element: Element,
    pub status: ContingencyStatus,
    /// Smallest margin over all violations (negative when violated).
    pub worst_margin_pct: Option<f64>,
    pub hard_violations: Vec<Violation>,
}

impl ContingencyResult {
    pub fn failing(&self) -> bool {
        self.status != ContingencyStatus::Secure
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Worsening {
    pub element: Element,
    pub baseline_margin_pct: f64,
    pub connected_margin_pct: f64,
    pub erosion_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrReading {
    pub bus: BusId,
    pub s_sc_mva: f64,
    pub s_ibr_mva: f64,
    pub scr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub outcome: StageOutcome,
    pub violations: Option<ViolationReport>,
    /// Steady-state violations present without the project and excluded from f1.
    #[serde(default)]
    pub preexisting: Vec<Violation>,
    #[serde(default)]
    pub contingencies_checked: usize,
    #[serde(default)]
    pub failing_contingencies: Vec<ContingencyResult>,
    #[serde(default)]
    pub new_failures: Vec<Element>,
    #[serde(default)]
    pub worsened: Vec<Worsening>,
    pub transient: Option<TransientResult>,
    #[serde(default)]
    pub scr_readings: Vec<ScrReading>,
    #[serde(default)]
    pub reasons: Vec<ReasonCode>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl StageReport {
    fn new(stage: Stage, outcome: StageOutcome) -> Self {
        Self {
            stage,
            outcome,
            violations: None,
            preexisting: vec![],
            contingencies_checked: 0,
            failing_contingencies: vec![],
            new_failures: vec![],
            worsened: vec![],
            transient: None,
            scr_readings: vec![],
            reasons: vec![],
            notes: vec![],
        }
    }

    fn skipped(stage: Stage, why: &str) -> Self {
        let mut r = Self::new(stage, StageOutcome::Skipped);
        r.notes.push(why.to_string());
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiaReport {
    pub connection: ConnectionRequest,
    pub case_name: String,
    pub escalation_level: u8,
    pub stages: Vec<StageReport>,
    pub decision: Decision,
    pub reason_codes: Vec<ReasonCode>,
    #[serde(default)]
    pub mitigations_applied: Vec<ShuntMitigation>,
    pub timestamp: DateTime<Utc>,
}

impl CiaReport {
    pub fn stage(&self, stage: Stage) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// Hard and borderline counts over the steady-state and contingency stages.
    pub fn violation_counts(&self) -> (usize, usize) {
        self.stages
            .iter()
            .filter_map(|s| s.violations.as_ref())
            .fold((0, 0), |(h, b), v| (h + v.hard_count, b + v.borderline_count))
    }

    pub fn summary_line(&self) -> String {
        let c = &self.connection;
        let reasons = if self.reason_codes.is_empty() {
            String::new()
        } else {
            format!(" ({})", self.reason_codes.iter().map(|r| r.as_str()).collect::<Vec<_>>().join(", "))
        };
        format!(
            "{} MW {} at bus {} on {}: {}{}",
            c.p_mw, c.ctype, c.bus, self.case_name, self.decision, reasons
        )
    }
}

/// Decision implied by a set of executed stages.
pub fn decide(stages: &[StageReport]) -> Decision {
    if stages.iter().any(|s| s.outcome == StageOutcome::Fail) {
        Decision::Reject
    } else if stages.iter().any(|s| s.outcome == StageOutcome::Borderline) {
        Decision::Borderline
    } else {
        Decision::Approve
    }
}

/// Highest stage k whose predicate holds: φ1 = true, φ2 = e_c, φ3 = e_t ∧ ι, φ4 = e_e ∧ ι.
pub fn escalation_level(req: &ConnectionRequest, cfg: &PipelineConfig) -> u8 {
    let phi = [
        true,
        cfg.enable_contingency,
        cfg.enable_transient && req.is_ibr,
        cfg.enable_emt && req.is_ibr,
    ];
    phi.iter().rposition(|&p| p).map_or(1, |k| k as u8 + 1)
}

fn stage_enabled(stage: Stage, req: &ConnectionRequest, cfg: &PipelineConfig) -> bool {
    match stage {
        Stage::F1 => true,
        Stage::F2 => cfg.enable_contingency,
        Stage::F3 => cfg.enable_transient && req.is_ibr,
        Stage::F4 => cfg.enable_emt && req.is_ibr,
    }
}

/// Intact-case state every assessment on the same network compares against.
/// The N-1 sweep is computed on first use and shared afterwards.
#[derive(Debug)]
pub struct Baseline {
    pub case: GridCase,
    pub solution: PowerFlowSolution,
    pub normal: ViolationReport,
    n1: OnceLock<Arc<Vec<ContingencyResult>>>,
}

impl Baseline {
    pub fn new(case: GridCase, cfg: &PipelineConfig) -> Result<Self, CiaError> {
        let solution = solve_ac_powerflow(&case, &cfg.pf);
        if !solution.converged {
            return Err(CiaError::BaselineDiverged(solution.diagnostic.clone().unwrap_or_default()));
        }
        let normal = inspect(&solution, &default_limits(Regime::Normal), &cfg.bands)?;
        Ok(Self {
            case,
            solution,
            normal,
            n1: OnceLock::new(),
        })
    }

    /// N-1 results of the intact case over its own contingency set.
    pub fn n1(&self, cfg: &PipelineConfig) -> Arc<Vec<ContingencyResult>> {
        self.n1
            .get_or_init(|| {
                let elements = n1_elements(&self.case);
                Arc::new(n1_sweep(&self.case, &elements, cfg, Some(&self.solution)))
            })
            .clone()
    }
}

fn has_load(case: &GridCase, comp: &[usize]) -> bool {
    let load = case.bus_load();
    comp.iter().any(|&i| load[i].0 != 0.0 || load[i].1 != 0.0)
}

fn run_one_contingency(case: &GridCase, element: Element, cfg: &PipelineConfig, warm: Option<&PowerFlowSolution>) -> ContingencyResult {
    let failed = |status| ContingencyResult {
        element,
        status,
        worst_margin_pct: None,
        hard_violations: vec![],
    };
    let outaged = match apply_outage(case, element) {
        Ok(c) => c,
        // already out of service in this case: nothing changes
        Err(_) => case.clone(),
    };
    let mut study = outaged;
    let islands = study.islands();
    if islands.len() > 1 {
        let slack = study.bus_index().get(study.slack_bus().id).expect("slack indexed");
        if islands.iter().filter(|c| !c.contains(&slack)).any(|c| has_load(&study, c)) {
            return failed(ContingencyStatus::IslandedLoad);
        }
        let main = islands.into_iter().find(|c| c.contains(&slack)).expect("slack island");
        study = study.restricted_to(&main);
    }
    let sol = match warm {
        Some(w) if w.bus_voltages.len() == study.buses.len() => solve_ac_powerflow_from(&study, &cfg.pf, &w.complex_voltages()),
        _ => solve_ac_powerflow(&study, &cfg.pf),
    };
    if !sol.converged {
        return failed(ContingencyStatus::Diverged);
    }
    let report = inspect(&sol, &default_limits(Regime::Emergency), &cfg.bands).expect("converged solution inspects");
    let worst = report.violations.iter().map(|v| v.margin_pct).reduce(f64::min);
    let hard: Vec<Violation> = report.hard().cloned().collect();
    ContingencyResult {
        element,
        status: if hard.is_empty() {
            ContingencyStatus::Secure
        } else {
            ContingencyStatus::Violation
        },
        worst_margin_pct: worst,
        hard_violations: hard,
    }
}

/// Runs each single-element outage on `case` and checks EMERGENCY limits.
/// Results follow the order of `elements`.
pub fn n1_sweep(
    case: &GridCase,
    elements: &[Element],
    cfg: &PipelineConfig,
    warm: Option<&PowerFlowSolution>,
) -> Vec<ContingencyResult> {
    elements.iter().map(|&e| run_one_contingency(case, e, cfg, warm)).collect()
}

fn violation_key(v: &Violation) -> (ElementKind, u32, ViolationType) {
    (v.element_kind, v.element_id, v.vtype)
}

fn band_for(v: &Violation, bands: &ToleranceBands) -> f64 {
    match v.vtype {
        ViolationType::Undervoltage | ViolationType::Overvoltage => bands.voltage_pu,
        ViolationType::Thermal => bands.loading_pct,
        ViolationType::AngleDifference => bands.angle_deg,
    }
}

/// Splits `report` into project-caused violations and ones already present
/// in the baseline. A baseline violation that the project pushes further
/// out by more than its tolerance band counts as project-caused.
fn split_preexisting(report: &ViolationReport, baseline: &ViolationReport, bands: &ToleranceBands) -> (ViolationReport, Vec<Violation>) {
    let mut kept = Vec::new();
    let mut pre = Vec::new();
    for v in &report.violations {
        let base = baseline.violations.iter().find(|b| violation_key(b) == violation_key(v));
        match base {
            Some(b) if (v.observed - b.observed).abs() <= band_for(v, bands) + 1e-12 => pre.push(v.clone()),
            _ => kept.push(v.clone()),
        }
    }
    let hard_count = kept.iter().filter(|v| v.severity == Severity::Hard).count();
    (
        ViolationReport {
            borderline_count: kept.len() - hard_count,
            hard_count,
            violations: kept,
            limits_used: report.limits_used,
            checked_elements: report.checked_elements,
        },
        pre,
    )
}

fn stage_steady_state(baseline: &Baseline, connected: &GridCase, cfg: &PipelineConfig) -> StageReport {
    let sol = solve_ac_powerflow(connected, &cfg.pf);
    if !sol.converged {
        let mut r = StageReport::new(Stage::F1, StageOutcome::Fail);
        r.reasons.push(ReasonCode::ConvergenceDivergence);
        r.notes
            .push(format!("power flow diverged: {}", sol.diagnostic.unwrap_or_default()));
        return r;
    }
    let limits = default_limits(Regime::Normal);
    let full = inspect(&sol, &limits, &cfg.bands).expect("converged solution inspects");
    let (report, pre) = if cfg.baseline_aware_steady_state {
        split_preexisting(&full, &baseline.normal, &cfg.bands)
    } else {
        (full, vec![])
    };
    let mut r = StageReport::new(Stage::F1, StageOutcome::Pass);
    r.preexisting = pre;
    if report.hard_count > 0 {
        r.outcome = StageOutcome::Fail;
        r.reasons.push(ReasonCode::SteadyStateViolation);
    } else if report.borderline_count > 0 {
        r.outcome = StageOutcome::Borderline;
        r.reasons.push(ReasonCode::SteadyStateBorderline);
        if cfg.enable_opf_escalation {
            match redispatch(connected, &limits) {
                Ok(rd) if rd.converged => {
                    let post = inspect(&rd.post_solution, &limits, &cfg.bands).expect("converged");
                    let (post, _) = if cfg.baseline_aware_steady_state {
                        split_preexisting(&post, &baseline.normal, &cfg.bands)
                    } else {
                        (post, vec![])
                    };
                    if post.is_clean() {
                        r.outcome = StageOutcome::Pass;
                        r.reasons = vec![ReasonCode::OpfEscalated];
                        r.notes.push(format!(
                            "borderline findings cleared by redispatch of {} unit(s)",
                            rd.dispatch_changes.len()
                        ));
                    } else {
                        r.notes.push("redispatch did not clear the borderline findings".into());
                    }
                }
                Ok(_) => r.notes.push("redispatch did not converge".into()),
                Err(e) => r.notes.push(format!("redispatch failed: {e}")),
            }
        }
    }
    r.violations = Some(report);
    r
}

/// Project-delta N-1 logic: fails when the connected case has contingency
/// failures the baseline does not have, and optionally when a contingency
/// failing in both erodes its worst margin by more than the threshold.
pub fn stage_contingency(baseline: &Baseline, connected: &GridCase, cfg: &PipelineConfig) -> StageReport {
    let base_results = baseline.n1(cfg);
    let elements: Vec<Element> = base_results.iter().map(|r| r.element).collect();
    let conn_sol = solve_ac_powerflow(connected, &cfg.pf);
    let conn_results = n1_sweep(connected, &elements, cfg, conn_sol.converged.then_some(&conn_sol));

    let base_failing: BTreeSet<Element> = base_results.iter().filter(|r| r.failing()).map(|r| r.element).collect();
    let mut r = StageReport::new(Stage::F2, StageOutcome::Pass);
    r.contingencies_checked = elements.len();
    r.new_failures = conn_results
        .iter()
        .filter(|c| c.failing() && !base_failing.contains(&c.element))
        .map(|c| c.element)
        .collect();
    for (b, c) in base_results.iter().zip(&conn_results) {
        if b.failing() && c.failing() {
            if let (Some(bm), Some(cm)) = (b.worst_margin_pct, c.worst_margin_pct) {
                let erosion = bm - cm;
                if erosion > cfg.worsening_threshold_pct {
                    r.worsened.push(Worsening {
                        element: b.element,
                        baseline_margin_pct: bm,
                        connected_margin_pct: cm,
                        erosion_pct: erosion,
                    });
                }
            }
        }
    }
    if conn_sol.converged {
        r.violations = inspect(&conn_sol, &default_limits(Regime::Emergency), &cfg.bands).ok();
    }
    r.failing_contingencies = conn_results.into_iter().filter(|c| c.failing()).collect();
    if !base_failing.is_empty() {
        r.notes.push(format!("{} contingencies already fail without the project", base_failing.len()));
    }
    if !r.new_failures.is_empty() {
        r.outcome = StageOutcome::Fail;
        r.reasons.push(ReasonCode::ContingencyFailure);
    }
    if cfg.fail_on_worsening && !r.worsened.is_empty() {
        r.outcome = StageOutcome::Fail;
        r.reasons.push(ReasonCode::ContingencyWorsening);
    }
    r
}

fn stage_transient(baseline: &Baseline, connected: &GridCase, req: &ConnectionRequest, cfg: &PipelineConfig) -> StageReport {
    let fault = FaultSpec {
        bus: req.bus,
        t_on_s: cfg.fault_t_on_s,
        t_off_s: cfg.fault_t_off_s,
        kind: Default::default(),
    };
    let params = TransientParams {
        dt_s: cfg.transient_dt_s,
        sample_s: 0.5,
        ..Default::default()
    };
    match run_transient_with(connected, &fault, cfg.transient_horizon_s, &params) {
        Ok(t) => {
            let mut r = StageReport::new(Stage::F3, StageOutcome::Pass);
            if !t.completed {
                r.outcome = StageOutcome::Fail;
                r.reasons.push(ReasonCode::TransientIncomplete);
            } else if !t.stable() {
                // same fault on the network without the project
                let before = run_transient_with(&baseline.case, &fault, cfg.transient_horizon_s, &params);
                if before.is_ok_and(|b| b.completed && !b.stable()) {
                    r.notes.push(format!("a fault at bus {} is already unstable without the project", req.bus));
                } else {
                    r.outcome = StageOutcome::Fail;
                    r.reasons.push(ReasonCode::TransientInstability);
                }
            }
            r.transient = Some(t);
            r
        }
        Err(e) => {
            let mut r = StageReport::new(Stage::F3, StageOutcome::Fail);
            r.reasons.push(ReasonCode::TransientIncomplete);
            r.notes.push(e.to_string());
            r
        }
    }
}

fn stage_scr(connected: &GridCase, req: &ConnectionRequest, cfg: &PipelineConfig) -> Result<StageReport, CiaError> {
    let s_sc = short_circuit_proxy(connected, req.bus)?;
    let scr = short_circuit_ratio(s_sc, req.p_mw);
    let mut r = StageReport::new(Stage::F4, StageOutcome::Pass);
    r.scr_readings.push(ScrReading {
        bus: req.bus,
        s_sc_mva: s_sc,
        s_ibr_mva: req.p_mw,
        scr,
    });
    match scr {
        Some(v) if v < cfg.scr_min => {
            r.outcome = StageOutcome::Fail;
            r.reasons.push(ReasonCode::LowScr);
        }
        None => r.notes.push("no inverter capacity to screen".into()),
        _ => {}
    }
    Ok(r)
}

/// Assesses `req` against a prepared baseline.
pub fn run_cia_on(baseline: &Baseline, req: &ConnectionRequest, cfg: &PipelineConfig) -> Result<CiaReport, CiaError> {
    cfg.validate()?;
    let connected = baseline.case.apply_connection(req)?;
    let level = escalation_level(req, cfg);
    let mut stages = Vec::new();
    for stage in Stage::ALL {
        if stages.last().is_some_and(|s: &StageReport| s.outcome == StageOutcome::Fail) {
            break;
        }
        if !stage_enabled(stage, req, cfg) {
            let why = match stage {
                Stage::F2 => "contingency screening disabled",
                Stage::F3 if !req.is_ibr => "not an inverter-based resource",
                Stage::F3 => "transient screening disabled",
                Stage::F4 if !req.is_ibr => "not an inverter-based resource",
                _ => "short-circuit screening disabled",
            };
            stages.push(StageReport::skipped(stage, why));
            continue;
        }
        let report = match stage {
            Stage::F1 => stage_steady_state(baseline, &connected, cfg),
            Stage::F2 => stage_contingency(baseline, &connected, cfg),
            Stage::F3 => stage_transient(baseline, &connected, req, cfg),
            Stage::F4 => stage_scr(&connected, req, cfg)?,
        };
        stages.push(report);
    }
    let decision = decide(&stages);
    let mut reason_codes: Vec<ReasonCode> = Vec::new();
    for code in stages.iter().flat_map(|s| s.reasons.iter().copied()) {
        if !reason_codes.contains(&code) {
            reason_codes.push(code);
        }
    }
    Ok(CiaReport {
        connection: *req,
        case_name: baseline.case.name.clone(),
        escalation_level: level,
        stages,
        decision,
        reason_codes,
        mitigations_applied: baseline.case.meta.mitigations.clone(),
        timestamp: Utc::now(),
    })
}

pub fn run_cia(case: &GridCase, req: &ConnectionRequest, cfg: &PipelineConfig) -> Result<CiaReport, CiaError> {
    cfg.validate()?;
    req.validate()?;
    if !case.has_bus(req.bus) {
        // reject bad requests before any simulation
        case.apply_connection(req)?;
    }
    let baseline = Baseline::new(case.clone(), cfg)?;
    run_cia_on(&baseline, req, cfg)
}

/// Applies shunt mitigations (bus, MVAr) before assessing. Every mitigation
/// bus is checked before anything is simulated.
pub fn run_cia_with_mitigation(
    case: &GridCase,
    req: &ConnectionRequest,
    mitigations: &[ShuntMitigation],
    cfg: &PipelineConfig,
) -> Result<CiaReport, CiaError> {
    let mitigated = apply_mitigations(case, mitigations)?;
    run_cia(&mitigated, req, cfg)
}

pub fn apply_mitigations(case: &GridCase, mitigations: &[ShuntMitigation]) -> Result<GridCase, CiaError> {
    let mut out = case.clone();
    for m in mitigations {
        out = out.apply_shunt_mitigation(m.bus, m.q_mvar)?;
    }
    Ok(out)
}
