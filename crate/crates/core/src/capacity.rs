//! Maximum hosting capacity by bisection over full assessments.

use cia_grid::inspector::ElementKind;
use cia_grid::{BusId, ConnectionRequest, ConnectionType, Element, GridCase, Severity, ViolationType};
use serde::{Deserialize, Serialize};

use crate::error::CiaError;
use crate::pipeline::{run_cia_on, Baseline, CiaReport, Decision, PipelineConfig, ReasonCode, Stage, StageOutcome};

/// Points of the inclusive coarse scan used when bisection is unsound.
pub const COARSE_SCAN_POINTS: usize = 11;

/// One assessment at a trial MW value.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub decision: Decision,
    pub report: Option<CiaReport>,
}

impl From<Decision> for Evaluation {
    fn from(decision: Decision) -> Self {
        Self { decision, report: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub mw: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitingFactor {
    SteadyStateViolation,
    ContingencyFailure,
    ConvergenceDivergence,
    TransientInstability,
    LowScr,
}

impl LimitingFactor {
    pub fn as_str(self) -> &'static str {
        match self {
            LimitingFactor::SteadyStateViolation => "steady_state_violation",
            LimitingFactor::ContingencyFailure => "contingency_failure",
            LimitingFactor::ConvergenceDivergence => "convergence_divergence",
            LimitingFactor::TransientInstability => "transient_instability",
            LimitingFactor::LowScr => "low_scr",
        }
    }

    fn from_reason(code: ReasonCode) -> Option<Self> {
        Some(match code {
            ReasonCode::ConvergenceDivergence => Self::ConvergenceDivergence,
            ReasonCode::SteadyStateViolation => Self::SteadyStateViolation,
            ReasonCode::ContingencyFailure | ReasonCode::ContingencyWorsening => Self::ContingencyFailure,
            ReasonCode::TransientInstability | ReasonCode::TransientIncomplete => Self::TransientInstability,
            ReasonCode::LowScr => Self::LowScr,
            ReasonCode::SteadyStateBorderline | ReasonCode::OpfEscalated => return None,
        })
    }
}

/// A violation the project introduced. `contingency` is set for
/// post-contingency findings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausedViolation {
    pub element_kind: ElementKind,
    pub element_id: u32,
    pub contingency: Option<Element>,
    pub vtype: Option<ViolationType>,
    pub value: Option<f64>,
    pub limit: Option<f64>,
    pub unit: String,
}

impl CausedViolation {
    pub fn describe(&self) -> String {
        let kind = match self.element_kind {
            ElementKind::Bus => "bus",
            ElementKind::Branch => "branch",
        };
        let mut s = match (self.vtype, self.value, self.limit) {
            (Some(t), Some(v), Some(l)) => format!(
                "{kind} {} {}: {v:.4} {} vs limit {l:.4}",
                self.element_id,
                serde_json::to_value(t).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
                self.unit
            ),
            _ => format!("{kind} {}", self.element_id),
        };
        if let Some(c) = self.contingency {
            s.push_str(&format!(" (outage of {c})"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionExplanation {
    pub limiting_factor: LimitingFactor,
    pub failing_stages: Vec<Stage>,
    pub project_caused: Vec<CausedViolation>,
    /// Contingencies that fail only with the project connected.
    #[serde(default)]
    pub new_contingency_failures: Vec<Element>,
}

pub fn explain_rejection(report: &CiaReport) -> Result<RejectionExplanation, CiaError> {
    if report.decision != Decision::Reject {
        return Err(CiaError::NotRejected(report.decision.to_string()));
    }
    let failing: Vec<&crate::pipeline::StageReport> =
        report.stages.iter().filter(|s| s.outcome == StageOutcome::Fail).collect();
    let first = failing.first().expect("rejected report has a failing stage");
    let limiting_factor = first
        .reasons
        .iter()
        .find_map(|&r| LimitingFactor::from_reason(r))
        .unwrap_or(LimitingFactor::SteadyStateViolation);

    let mut project_caused = Vec::new();
    let mut new_contingency_failures = Vec::new();
    for stage in &failing {
        match stage.stage {
            Stage::F1 => {
                if let Some(v) = &stage.violations {
                    project_caused.extend(v.violations.iter().filter(|v| v.severity == Severity::Hard).map(|v| {
                        CausedViolation {
                            element_kind: v.element_kind,
                            element_id: v.element_id,
                            contingency: None,
                            vtype: Some(v.vtype),
                            value: Some(v.observed),
                            limit: Some(v.limit),
                            unit: v.unit.clone(),
                        }
                    }));
                }
            }
            Stage::F2 => {
                new_contingency_failures.extend(stage.new_failures.iter().copied());
                for c in stage.failing_contingencies.iter().filter(|c| stage.new_failures.contains(&c.element)) {
                    project_caused.extend(c.hard_violations.iter().map(|v| CausedViolation {
                        element_kind: v.element_kind,
                        element_id: v.element_id,
                        contingency: Some(c.element),
                        vtype: Some(v.vtype),
                        value: Some(v.observed),
                        limit: Some(v.limit),
                        unit: v.unit.clone(),
                    }));
                }
            }
            Stage::F4 => {
                project_caused.extend(stage.scr_readings.iter().map(|r| CausedViolation {
                    element_kind: ElementKind::Bus,
                    element_id: r.bus.0,
                    contingency: None,
                    vtype: None,
                    value: r.scr,
                    limit: None,
                    unit: "SCR".into(),
                }));
            }
            Stage::F3 => {}
        }
    }
    Ok(RejectionExplanation {
        limiting_factor,
        failing_stages: failing.iter().map(|s| s.stage).collect(),
        project_caused,
        new_contingency_failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub tol_mw: f64,
    /// Extra points assessed before bisection starts. Bisection alone never
    /// samples both sides of a non-monotone region, so probes are the way
    /// to make contradictions observable.
    #[serde(default)]
    pub probe_mw: Vec<f64>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            tol_mw: 1.0,
            probe_mw: vec![],
        }
    }
}

/// Outcome of a search over an arbitrary evaluator.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub max_approved_mw: f64,
    pub iterations: usize,
    pub samples: Vec<Sample>,
    pub fallback_used: bool,
    pub diagnostics: Vec<String>,
    /// Report at the smallest rejected sample above the result.
    pub boundary_reject: Option<CiaReport>,
    pub final_width: f64,
}

/// First rejected sample below an approved one, if any.
fn find_contradiction(samples: &[Sample]) -> Option<(Sample, Sample)> {
    for r in samples.iter().filter(|s| !s.decision.is_feasible()) {
        if let Some(a) = samples.iter().find(|a| a.decision.is_feasible() && a.mw > r.mw) {
            return Some((*r, *a));
        }
    }
    None
}

pub fn check_range(mw_min: f64, mw_max: f64, tol_mw: f64) -> Result<(), CiaError> {
    if !(mw_min.is_finite() && mw_max.is_finite() && mw_min >= 0.0) {
        return Err(CiaError::InvalidRange(format!("bounds must be finite and non-negative: [{mw_min}, {mw_max}]")));
    }
    if mw_min >= mw_max {
        return Err(CiaError::InvalidRange(format!("mw_min {mw_min} must be below mw_max {mw_max}")));
    }
    if !(tol_mw > 0.0) {
        return Err(CiaError::InvalidRange(format!("tolerance must be positive, got {tol_mw}")));
    }
    Ok(())
}

/// Bisection on `eval` over [mw_min, mw_max]. Borderline counts as
/// feasible. Falls back to a coarse scan if the sample history is ever
/// non-monotone. With a lower bound of zero the search never costs more
/// than ceil(log2(range / tol)) evaluations.
pub fn bisect<F>(mw_min: f64, mw_max: f64, opts: &SearchOptions, mut eval: F) -> Result<SearchOutcome, CiaError>
where
    F: FnMut(f64) -> Result<Evaluation, CiaError>,
{
    check_range(mw_min, mw_max, opts.tol_mw)?;
    let mut samples: Vec<Sample> = Vec::new();
    let mut reports: Vec<(f64, CiaReport)> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut run = |mw: f64, samples: &mut Vec<Sample>| -> Result<Decision, CiaError> {
        let e = eval(mw)?;
        samples.push(Sample { mw, decision: e.decision });
        if let Some(r) = e.report {
            if e.decision == Decision::Reject {
                reports.push((mw, r));
            }
        }
        Ok(e.decision)
    };

    let mut contradiction = None;
    for &p in opts.probe_mw.iter().filter(|p| (mw_min..=mw_max).contains(*p)) {
        run(p, &mut samples)?;
        contradiction = find_contradiction(&samples);
        if contradiction.is_some() {
            break;
        }
    }

    let (mut lo, mut hi) = (mw_min, mw_max);
    let mut lo_ok = false;
    // probes already tell which side of the boundary some points are on
    for s in &samples {
        if s.decision.is_feasible() && s.mw >= lo {
            lo = s.mw;
            lo_ok = true;
        }
    }
    for s in &samples {
        if !s.decision.is_feasible() && s.mw <= hi && s.mw > lo {
            hi = s.mw;
        }
    }

    while contradiction.is_none() && hi - lo > opts.tol_mw {
        let mid = 0.5 * (lo + hi);
        if run(mid, &mut samples)?.is_feasible() {
            lo = mid;
            lo_ok = true;
        } else {
            hi = mid;
        }
        contradiction = find_contradiction(&samples);
    }
    // the range ends are only evaluated when bisection could not settle
    // the answer without them: a range narrower than the tolerance, or a
    // non-zero lower bound that every midpoint rejected
    if contradiction.is_none() && samples.is_empty() {
        if run(mw_max, &mut samples)?.is_feasible() {
            lo = mw_max;
            lo_ok = true;
        }
    }
    if contradiction.is_none() && !lo_ok && mw_min > 0.0 {
        lo_ok = run(mw_min, &mut samples)?.is_feasible();
        contradiction = find_contradiction(&samples);
    }

    let mut fallback_used = false;
    let max_approved_mw = if let Some((r, a)) = contradiction {
        diagnostics.push(format!(
            "monotonicity contradiction: rejected at {:.3} MW but approved at {:.3} MW; falling back to a {COARSE_SCAN_POINTS}-point scan",
            r.mw, a.mw
        ));
        fallback_used = true;
        let step = (mw_max - mw_min) / (COARSE_SCAN_POINTS - 1) as f64;
        for k in 0..COARSE_SCAN_POINTS {
            let mw = if k == COARSE_SCAN_POINTS - 1 { mw_max } else { mw_min + step * k as f64 };
            if !samples.iter().any(|s| s.mw == mw) {
                run(mw, &mut samples)?;
            }
        }
        samples
            .iter()
            .filter(|s| s.decision.is_feasible())
            .map(|s| s.mw)
            .reduce(f64::max)
            .unwrap_or_else(|| {
                diagnostics.push("no sampled point was approved".into());
                0.0
            })
    } else if lo_ok {
        lo
    } else if mw_min > 0.0 {
        diagnostics.push(format!("lower bound {mw_min} MW is already rejected"));
        0.0
    } else {
        diagnostics.push(format!("every sample was rejected; capacity is below {hi:.3} MW"));
        0.0
    };

    let boundary_reject = reports
        .into_iter()
        .filter(|(mw, _)| *mw > max_approved_mw || (!lo_ok && *mw >= mw_min))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, r)| r);
    Ok(SearchOutcome {
        max_approved_mw,
        iterations: samples.len(),
        final_width: if fallback_used { f64::NAN } else { (hi - lo).max(0.0) },
        samples,
        fallback_used,
        diagnostics,
        boundary_reject,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub case_name: String,
    pub bus: BusId,
    pub ctype: ConnectionType,
    pub mw_min: f64,
    pub mw_max: f64,
    pub tol_mw: f64,
    pub max_approved_mw: f64,
    pub iterations: usize,
    pub samples: Vec<Sample>,
    pub boundary_reject: Option<CiaReport>,
    pub rejection_explanation: Option<RejectionExplanation>,
    pub fallback_used: bool,
    pub diagnostics: Vec<String>,
}

impl CapacityResult {
    pub fn limiting_factor(&self) -> Option<LimitingFactor> {
        self.rejection_explanation.as_ref().map(|e| e.limiting_factor)
    }
}

pub fn find_max_capacity(
    case: &GridCase,
    bus: BusId,
    ctype: ConnectionType,
    mw_min: f64,
    mw_max: f64,
    tol_mw: f64,
    cfg: &PipelineConfig,
) -> Result<CapacityResult, CiaError> {
    let opts = SearchOptions { tol_mw, probe_mw: vec![] };
    find_max_capacity_with(case, bus, ctype, mw_min, mw_max, &opts, cfg)
}

pub fn find_max_capacity_with(
    case: &GridCase,
    bus: BusId,
    ctype: ConnectionType,
    mw_min: f64,
    mw_max: f64,
    opts: &SearchOptions,
    cfg: &PipelineConfig,
) -> Result<CapacityResult, CiaError> {
    check_range(mw_min, mw_max, opts.tol_mw)?;
    cfg.validate()?;
    if !case.has_bus(bus) {
        case.apply_connection(&ConnectionRequest::new(bus, mw_min, ctype))?;
    }
    let baseline = Baseline::new(case.clone(), cfg)?;
    find_max_capacity_on(&baseline, bus, ctype, mw_min, mw_max, opts, cfg)
}

pub fn find_max_capacity_on(
    baseline: &Baseline,
    bus: BusId,
    ctype: ConnectionType,
    mw_min: f64,
    mw_max: f64,
    opts: &SearchOptions,
    cfg: &PipelineConfig,
) -> Result<CapacityResult, CiaError> {
    let out = bisect(mw_min, mw_max, opts, |mw| {
        let report = run_cia_on(baseline, &ConnectionRequest::new(bus, mw, ctype), cfg)?;
        log::debug!("capacity probe {mw:.3} MW at bus {bus}: {}", report.decision);
        Ok(Evaluation {
            decision: report.decision,
            report: Some(report),
        })
    })?;
    let rejection_explanation = out.boundary_reject.as_ref().map(explain_rejection).transpose()?;
    Ok(CapacityResult {
        case_name: baseline.case.name.clone(),
        bus,
        ctype,
        mw_min,
        mw_max,
        tol_mw: opts.tol_mw,
        max_approved_mw: out.max_approved_mw,
        iterations: out.iterations,
        samples: out.samples,
        boundary_reject: out.boundary_reject,
        rejection_explanation,
        fallback_used: out.fallback_used,
        diagnostics: out.diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusCapacity {
    pub bus: BusId,
    pub screened_mw: f64,
    pub max_approved_mw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestBusResult {
    pub best: Option<CapacityResult>,
    /// Every candidate with its steady-state screen result, best first.
    pub candidates: Vec<BusCapacity>,
}

/// Sweeps load-serving buses. A steady-state-only search ranks every
/// candidate, then the `full_checks` best are searched with the full cascade.
pub fn find_best_bus(
    case: &GridCase,
    ctype: ConnectionType,
    mw_min: f64,
    mw_max: f64,
    tol_mw: f64,
    full_checks: usize,
    cfg: &PipelineConfig,
) -> Result<BestBusResult, CiaError> {
    let opts = SearchOptions { tol_mw, probe_mw: vec![] };
    let screen_cfg = cfg.steady_state_only();
    let screen_base = Baseline::new(case.clone(), &screen_cfg)?;
    let mut candidates: Vec<BusCapacity> = Vec::new();
    for bus in case.load_buses() {
        let r = find_max_capacity_on(&screen_base, bus, ctype, mw_min, mw_max, &opts, &screen_cfg)?;
        candidates.push(BusCapacity {
            bus,
            screened_mw: r.max_approved_mw,
            max_approved_mw: None,
        });
    }
    candidates.sort_by(|a, b| b.screened_mw.total_cmp(&a.screened_mw).then(a.bus.cmp(&b.bus)));

    let full_base = Baseline::new(case.clone(), cfg)?;
    let mut best: Option<CapacityResult> = None;
    for c in candidates.iter_mut().take(full_checks.max(1)) {
        let r = find_max_capacity_on(&full_base, c.bus, ctype, mw_min, mw_max, &opts, cfg)?;
        c.max_approved_mw = Some(r.max_approved_mw);
        if best.as_ref().is_none_or(|b| r.max_approved_mw > b.max_approved_mw) {
            best = Some(r);
        }
    }
    candidates.sort_by(|a, b| {
        let key = |c: &BusCapacity| c.max_approved_mw.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a)).then(b.screened_mw.total_cmp(&a.screened_mw)).then(a.bus.cmp(&b.bus))
    });
    Ok(BestBusResult { best, candidates })
}
