//! Limit checking of a solved network state.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::GridError;
use crate::powerflow::PowerFlowSolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Regime {
    Normal,
    Emergency,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Normal => "NORMAL",
            Regime::Emergency => "EMERGENCY",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitSet {
    pub v_min: f64,
    pub v_max: f64,
    /// Percent of the regime's rating (Rate A normal, Rate B emergency).
    pub loading_max: f64,
    /// Branch angle difference limit in degrees; `None` disables the check.
    #[serde(default)]
    pub angle_diff_max: Option<f64>,
    pub regime: Regime,
}

impl LimitSet {
    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.v_min < self.v_max) || self.v_min <= 0.0 {
            return Err(GridError::Invalid(format!(
                "voltage band [{}, {}] is empty",
                self.v_min, self.v_max
            )));
        }
        if !(self.loading_max > 0.0) {
            return Err(GridError::Invalid(format!("loading_max must be positive, got {}", self.loading_max)));
        }
        if let Some(a) = self.angle_diff_max {
            if !(a > 0.0) {
                return Err(GridError::Invalid(format!("angle_diff_max must be positive, got {a}")));
            }
        }
        Ok(())
    }
}

pub fn default_limits(regime: Regime) -> LimitSet {
    match regime {
        Regime::Normal => LimitSet {
            v_min: 0.95,
            v_max: 1.05,
            loading_max: 100.0,
            angle_diff_max: None,
            regime,
        },
        Regime::Emergency => LimitSet {
            v_min: 0.90,
            v_max: 1.10,
            loading_max: 110.0,
            angle_diff_max: None,
            regime,
        },
    }
}

/// How far past a limit a violation may sit and still count as borderline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceBands {
    pub voltage_pu: f64,
    /// Percentage points of loading.
    pub loading_pct: f64,
    #[serde(default)]
    pub angle_deg: f64,
}

impl Default for ToleranceBands {
    fn default() -> Self {
        Self {
            voltage_pu: 0.01,
            loading_pct: 5.0,
            angle_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Bus,
    Branch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationType {
    Undervoltage,
    Overvoltage,
    Thermal,
    AngleDifference,
}

impl ViolationType {
    pub fn unit(self) -> &'static str {
        match self {
            ViolationType::Undervoltage | ViolationType::Overvoltage => "pu",
            ViolationType::Thermal => "%",
            ViolationType::AngleDifference => "deg",
        }
    }
}

impl fmt::Display for ViolationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationType::Undervoltage => "undervoltage",
            ViolationType::Overvoltage => "overvoltage",
            ViolationType::Thermal => "thermal",
            ViolationType::AngleDifference => "angle_difference",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Hard,
    Borderline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub element_kind: ElementKind,
    pub element_id: u32,
    pub vtype: ViolationType,
    pub observed: f64,
    pub limit: f64,
    pub unit: String,
    /// Negative when violated.
    pub margin_pct: f64,
    pub severity: Severity,
}

impl Violation {
    pub fn describe(&self) -> String {
        format!(
            "{} {} {}: {:.4} {} vs limit {} {} (margin {:.2}%, {})",
            match self.element_kind {
                ElementKind::Bus => "bus",
                ElementKind::Branch => "branch",
            },
            self.element_id,
            self.vtype,
            self.observed,
            self.unit,
            self.limit,
            self.unit,
            self.margin_pct,
            match self.severity {
                Severity::Hard => "hard",
                Severity::Borderline => "borderline",
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
    pub hard_count: usize,
    pub borderline_count: usize,
    pub limits_used: LimitSet,
    pub checked_elements: usize,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn hard(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Hard)
    }
}

fn upper_margin(observed: f64, limit: f64) -> f64 {
    (limit - observed) / limit * 100.0
}

fn lower_margin(observed: f64, limit: f64) -> f64 {
    (observed - limit) / limit * 100.0
}

fn severity(excess: f64, band: f64) -> Severity {
    if excess <= band + 1e-12 {
        Severity::Borderline
    } else {
        Severity::Hard
    }
}

/// Checks every bus voltage and every in-service branch loading (and angle
/// difference when enabled) against `limits`. Only violated elements are
/// reported; borderline marks violations that lie within the band.
pub fn inspect(
    solution: &PowerFlowSolution,
    limits: &LimitSet,
    bands: &ToleranceBands,
) -> Result<ViolationReport, GridError> {
    if !solution.converged {
        return Err(GridError::NotConverged(
            solution
                .diagnostic
                .clone()
                .unwrap_or_else(|| "power flow did not converge".into()),
        ));
    }
    limits.validate()?;
    let mut violations = Vec::new();
    let mut checked = 0;
    for b in &solution.bus_voltages {
        checked += 1;
        let v = b.vm;
        let (vtype, limit, excess, margin) = if v < limits.v_min {
            (ViolationType::Undervoltage, limits.v_min, limits.v_min - v, lower_margin(v, limits.v_min))
        } else if v > limits.v_max {
            (ViolationType::Overvoltage, limits.v_max, v - limits.v_max, upper_margin(v, limits.v_max))
        } else {
            continue;
        };
        violations.push(Violation {
            element_kind: ElementKind::Bus,
            element_id: b.bus.0,
            vtype,
            observed: v,
            limit,
            unit: vtype.unit().into(),
            margin_pct: margin,
            severity: severity(excess, bands.voltage_pu),
        });
    }
    let emergency = limits.regime == Regime::Emergency;
    for f in solution.branch_flows.iter().filter(|f| f.in_service) {
        checked += 1;
        if let Some(loading) = f.loading_against(emergency) {
            if loading > limits.loading_max {
                violations.push(Violation {
                    element_kind: ElementKind::Branch,
                    element_id: f.id.0,
                    vtype: ViolationType::Thermal,
                    observed: loading,
                    limit: limits.loading_max,
                    unit: "%".into(),
                    margin_pct: upper_margin(loading, limits.loading_max),
                    severity: severity(loading - limits.loading_max, bands.loading_pct),
                });
            }
        }
    }
    if let Some(max_deg) = limits.angle_diff_max {
        for f in solution.branch_flows.iter().filter(|f| f.in_service) {
            checked += 1;
            let (Some(a), Some(b)) = (solution.bus(f.from_bus), solution.bus(f.to_bus)) else {
                continue;
            };
            let diff = (a.va_rad - b.va_rad).to_degrees().abs();
            if diff > max_deg {
                violations.push(Violation {
                    element_kind: ElementKind::Branch,
                    element_id: f.id.0,
                    vtype: ViolationType::AngleDifference,
                    observed: diff,
                    limit: max_deg,
                    unit: "deg".into(),
                    margin_pct: upper_margin(diff, max_deg),
                    severity: severity(diff - max_deg, bands.angle_deg),
                });
            }
        }
    }
    let hard_count = violations.iter().filter(|v| v.severity == Severity::Hard).count();
    Ok(ViolationReport {
        borderline_count: violations.len() - hard_count,
        hard_count,
        violations,
        limits_used: *limits,
        checked_elements: checked,
    })
}
