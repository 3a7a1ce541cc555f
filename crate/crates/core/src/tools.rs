//! The eleven agent tools: JSON-schema specs, argument validation and
//! dispatch to the solvers and the assessment pipeline.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use cia_grid::{
    builtin_case, default_limits, inspect, load_case, n1_elements, redispatch, solve_ac_powerflow, BusId, BusKind, ConnectionRequest,
    ConnectionType, GridCase, GridError, LimitSet, Regime, ShuntMitigation, BUILTIN_CASES,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::capacity::{find_max_capacity_on, CapacityResult, SearchOptions};
use crate::error::CiaError;
use crate::memory::{NewStudy, StudyMemory};
use crate::pipeline::{apply_mitigations, n1_sweep, run_cia_on, Baseline, CiaReport, ContingencyStatus, PipelineConfig};

pub const REFERENCE_BACKEND: &str = "reference";

pub const TOOL_NAMES: [&str; 11] = [
    "list_backends",
    "list_cases",
    "set_backend",
    "run_powerflow",
    "run_opf",
    "inspect_violations",
    "run_contingency",
    "run_cia",
    "run_cia_with_mitigation",
    "find_max_capacity",
    "query_network_data",
];

/// Tools whose output can back numeric statements in a response.
pub fn is_analytic(name: &str) -> bool {
    !matches!(name, "list_backends" | "list_cases" | "set_backend")
}

/// Tools that run a simulation.
pub fn is_simulation(name: &str) -> bool {
    matches!(
        name,
        "run_powerflow"
            | "run_opf"
            | "inspect_violations"
            | "run_contingency"
            | "run_cia"
            | "run_cia_with_mitigation"
            | "find_max_capacity"
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Value,
    /// Arguments the schema must accept.
    #[serde(default)]
    pub examples: Vec<Value>,
    /// Arguments the schema must reject.
    #[serde(default)]
    pub counter_examples: Vec<Value>,
}

fn connection_schema() -> Value {
    json!({
        "type": "object",
        "description": "The proposed connection.",
        "properties": {
            "bus": {"type": "integer", "minimum": 1, "description": "Bus number of the point of interconnection."},
            "capacity_mw": {"type": "number", "minimum": 0, "description": "Active power in MW."},
            "type": {"type": "string", "enum": ConnectionType::ALL.iter().map(|t| t.as_str()).collect::<Vec<_>>()},
            "is_ibr": {"type": "boolean", "description": "Inverter-based resource. Derived from type when omitted."}
        },
        "required": ["bus", "capacity_mw", "type"],
        "additionalProperties": false
    })
}

fn case_path() -> Value {
    json!({"type": "string", "minLength": 1, "description": "Builtin case alias (ieee14, ieee30, ieee57, ieee118) or a path to a case file."})
}

fn regime() -> Value {
    json!({"type": "string", "enum": ["NORMAL", "EMERGENCY"]})
}

fn mitigations_schema() -> Value {
    json!({
        "type": "array",
        "minItems": 1,
        "items": {
            "type": "object",
            "properties": {
                "bus": {"type": "integer", "minimum": 1},
                "q_mvar": {"type": "number", "description": "Shunt reactive injection at 1 pu, capacitive positive."}
            },
            "required": ["bus", "q_mvar"],
            "additionalProperties": false
        }
    })
}

fn object(properties: Value, required: &[&str]) -> Value {
    json!({"type": "object", "properties": properties, "required": required, "additionalProperties": false})
}

fn spec(name: &str, description: &str, parameters: Value, examples: Vec<Value>, counter: Vec<Value>) -> ToolSpec {
    ToolSpec {
        name: name.into(),
        description: description.into(),
        parameters,
        examples,
        counter_examples: counter,
    }
}

pub fn tool_specs() -> Vec<ToolSpec> {
    let conn = json!({"bus": 14, "capacity_mw": 3.9, "type": "load"});
    vec![
        spec(
            "list_backends",
            "List registered solver backends and the active one.",
            object(json!({}), &[]),
            vec![json!({})],
            vec![json!({"backend": "x"})],
        ),
        spec(
            "list_cases",
            "List the builtin test cases.",
            object(json!({}), &[]),
            vec![json!({})],
            vec![json!({"case_path": 1})],
        ),
        spec(
            "set_backend",
            "Select the solver backend. Only registered backends are accepted.",
            object(json!({"backend": {"type": "string", "minLength": 1}}), &["backend"]),
            vec![json!({"backend": "reference"})],
            vec![json!({}), json!({"backend": 3})],
        ),
        spec(
            "run_powerflow",
            "Solve the AC power flow of a case. Returns convergence, bus voltages, branch flows and NORMAL-limit violations.",
            object(json!({"case_path": case_path()}), &["case_path"]),
            vec![json!({"case_path": "ieee14"})],
            vec![json!({}), json!({"case_path": ""})],
        ),
        spec(
            "run_opf",
            "Redispatch generation to relieve thermal overloads without changing topology, then re-inspect violations.",
            object(json!({"case_path": case_path(), "regime": regime()}), &["case_path"]),
            vec![json!({"case_path": "ieee118"}), json!({"case_path": "ieee14", "regime": "EMERGENCY"})],
            vec![json!({"case_path": "ieee14", "regime": "SEVERE"})],
        ),
        spec(
            "inspect_violations",
            "Solve a case and report voltage, thermal and (optionally) angle-difference violations.",
            object(
                json!({
                    "case_path": case_path(),
                    "regime": regime(),
                    "check_angle_difference": {"type": "boolean"},
                    "angle_max_deg": {"type": "number", "exclusiveMinimum": 0}
                }),
                &["case_path"],
            ),
            vec![json!({"case_path": "ieee30", "regime": "NORMAL"}), json!({"case_path": "ieee30", "check_angle_difference": true, "angle_max_deg": 30})],
            vec![json!({"regime": "NORMAL"})],
        ),
        spec(
            "run_contingency",
            "N-1 screening of a case under EMERGENCY limits: pass/fail counts and failing contingencies.",
            object(json!({"case_path": case_path()}), &["case_path"]),
            vec![json!({"case_path": "ieee14"})],
            vec![json!({"case_path": ["ieee14"]})],
        ),
        spec(
            "run_cia",
            "Run the staged connection impact assessment for one proposed connection. Returns stage reports, the decision and reason codes.",
            object(
                json!({
                    "case_path": case_path(),
                    "connection": connection_schema(),
                    "enable_contingency": {"type": "boolean"},
                    "enable_transient": {"type": "boolean"},
                    "enable_scr": {"type": "boolean"}
                }),
                &["case_path", "connection"],
            ),
            vec![
                json!({"case_path": "ieee118", "connection": conn}),
                json!({"case_path": "ieee14", "connection": {"bus": 9, "capacity_mw": 50, "type": "solar", "is_ibr": true}, "enable_transient": false}),
            ],
            vec![
                json!({"case_path": "ieee118", "connection": {"bus": 14, "capacity_mw": 3.9}}),
                json!({"case_path": "ieee118", "connection": {"bus": 14, "capacity_mw": -1, "type": "load"}}),
                json!({"case_path": "ieee118", "connection": {"bus": 14, "capacity_mw": 5, "type": "nuclear"}}),
            ],
        ),
        spec(
            "run_cia_with_mitigation",
            "Apply shunt reactive mitigations, then run the connection impact assessment. The report lists the mitigations applied.",
            object(
                json!({"case_path": case_path(), "connection": connection_schema(), "mitigations": mitigations_schema()}),
                &["case_path", "connection", "mitigations"],
            ),
            vec![json!({"case_path": "ieee14", "connection": {"bus": 14, "capacity_mw": 20, "type": "load"}, "mitigations": [{"bus": 14, "q_mvar": 20}]})],
            vec![
                json!({"case_path": "ieee14", "connection": {"bus": 14, "capacity_mw": 20, "type": "load"}, "mitigations": []}),
                json!({"case_path": "ieee14", "connection": {"bus": 14, "capacity_mw": 20, "type": "load"}}),
            ],
        ),
        spec(
            "find_max_capacity",
            "Bisection search for the largest MW at a bus that the full assessment approves.",
            object(
                json!({
                    "case_path": case_path(),
                    "bus": {"type": "integer", "minimum": 1},
                    "connection_type": {"type": "string", "enum": ConnectionType::ALL.iter().map(|t| t.as_str()).collect::<Vec<_>>()},
                    "mw_min": {"type": "number", "minimum": 0},
                    "mw_max": {"type": "number", "exclusiveMinimum": 0},
                    "tol_mw": {"type": "number", "exclusiveMinimum": 0}
                }),
                &["case_path", "bus", "connection_type"],
            ),
            vec![json!({"case_path": "ieee118", "bus": 14, "connection_type": "load"}), json!({"case_path": "ieee14", "bus": 9, "connection_type": "wind", "mw_max": 200, "tol_mw": 0.5})],
            vec![json!({"case_path": "ieee118", "bus": 14}), json!({"case_path": "ieee118", "bus": "14", "connection_type": "load"})],
        ),
        spec(
            "query_network_data",
            "Raw topology and equipment data of a case: buses, branches with impedances and ratings, generators with limits. No solved state.",
            object(json!({"case_path": case_path()}), &["case_path"]),
            vec![json!({"case_path": "ieee118"})],
            vec![json!({"case": "ieee118"})],
        ),
    ]
}

fn validators() -> &'static HashMap<String, jsonschema::Validator> {
    static V: OnceLock<HashMap<String, jsonschema::Validator>> = OnceLock::new();
    V.get_or_init(|| {
        tool_specs()
            .into_iter()
            .map(|s| {
                let v = jsonschema::validator_for(&s.parameters).expect("tool schema compiles");
                (s.name, v)
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

/// Field-level schema errors for `args`, empty when valid.
pub fn validate_args(name: &str, args: &Value) -> Result<Vec<FieldError>, ToolError> {
    let v = validators().get(name).ok_or_else(|| ToolError::UnknownTool(name.to_string()))?;
    let mut out: Vec<FieldError> = v
        .iter_errors(args)
        .map(|e| {
            let mut field = e.instance_path().as_str().trim_start_matches('/').replace('/', ".");
            if let jsonschema::error::ValidationErrorKind::Required { property } = e.kind() {
                let p = property.as_str().map(str::to_owned).unwrap_or_else(|| property.to_string());
                field = if field.is_empty() { p } else { format!("{field}.{p}") };
            }
            FieldError {
                field: if field.is_empty() { "(root)".into() } else { field },
                message: e.to_string(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.field.cmp(&b.field).then(a.message.cmp(&b.message)));
    Ok(out)
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unknown tool {name}; available: {}", TOOL_NAMES.join(", "), name = .0)]
    UnknownTool(String),
    #[error("invalid arguments for {tool}: {}", .errors.iter().map(|e| format!("{}: {}", e.field, e.message)).collect::<Vec<_>>().join("; "))]
    Schema { tool: String, errors: Vec<FieldError> },
    #[error("{tool} failed: {source}")]
    Execution {
        tool: String,
        #[source]
        source: CiaError,
    },
    #[error("unknown backend {name}; registered: {}", .registered.join(", "))]
    UnknownBackend { name: String, registered: Vec<String> },
}

impl ToolError {
    pub fn code(&self) -> &'static str {
        match self {
            ToolError::UnknownTool(_) => "unknown_tool",
            ToolError::Schema { .. } => "schema_violation",
            ToolError::Execution { .. } => "execution_error",
            ToolError::UnknownBackend { .. } => "unknown_backend",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool_name: String,
    pub ok: bool,
    pub payload: Value,
    pub error: Option<String>,
    pub grounding: bool,
}

impl ToolResult {
    pub fn failure(tool: &str, err: &ToolError) -> Self {
        Self {
            tool_name: tool.to_string(),
            ok: false,
            payload: json!({"error_code": err.code()}),
            error: Some(err.to_string()),
            grounding: false,
        }
    }
}

/// A tool result plus the typed artifacts the agent keeps.
#[derive(Debug, Clone)]
pub struct ToolOutcome {
    pub result: ToolResult,
    pub report: Option<CiaReport>,
    pub capacity: Option<CapacityResult>,
    /// Memory id of the persisted study, or the persistence warning.
    pub memory: Option<Result<u64, String>>,
}

#[derive(Debug)]
pub struct BackendRegistry {
    registered: Vec<String>,
    active: String,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self {
            registered: vec![REFERENCE_BACKEND.to_string()],
            active: REFERENCE_BACKEND.to_string(),
        }
    }
}

impl BackendRegistry {
    pub fn registered(&self) -> &[String] {
        &self.registered
    }

    pub fn active(&self) -> &str {
        &self.active
    }

    pub fn set(&mut self, name: &str) -> Result<(), ToolError> {
        let key = name.trim().to_ascii_lowercase();
        match self.registered.iter().find(|b| **b == key) {
            Some(b) => {
                self.active = b.clone();
                Ok(())
            }
            None => Err(ToolError::UnknownBackend {
                name: name.to_string(),
                registered: self.registered.clone(),
            }),
        }
    }
}

const BASELINE_CACHE_LIMIT: usize = 16;

/// Tool dispatcher shared by all sessions.
pub struct ToolRegistry {
    specs: Vec<ToolSpec>,
    backends: Mutex<BackendRegistry>,
    memory: Arc<StudyMemory>,
    cfg: PipelineConfig,
    baselines: Mutex<Vec<(String, Arc<Baseline>)>>,
    case_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
struct ConnectionArgs {
    bus: u32,
    capacity_mw: f64,
    #[serde(rename = "type")]
    ctype: ConnectionType,
    is_ibr: Option<bool>,
}

impl ConnectionArgs {
    fn request(&self) -> ConnectionRequest {
        let mut r = ConnectionRequest::new(self.bus, self.capacity_mw, self.ctype);
        if let Some(i) = self.is_ibr {
            r.is_ibr = i;
        }
        r
    }
}

fn field<T: serde::de::DeserializeOwned>(args: &Value, key: &str) -> Option<T> {
    args.get(key).and_then(|v| serde_json::from_value(v.clone()).ok())
}

fn exec_err(tool: &str) -> impl FnOnce(CiaError) -> ToolError + '_ {
    move |source| ToolError::Execution {
        tool: tool.to_string(),
        source,
    }
}

fn grid_err(tool: &str) -> impl FnOnce(GridError) -> ToolError + '_ {
    move |e| ToolError::Execution {
        tool: tool.to_string(),
        source: CiaError::Grid(e),
    }
}

impl ToolRegistry {
    pub fn new(memory: Arc<StudyMemory>, cfg: PipelineConfig) -> Self {
        Self {
            specs: tool_specs(),
            backends: Mutex::new(BackendRegistry::default()),
            memory,
            cfg,
            baselines: Mutex::new(Vec::new()),
            case_dir: None,
        }
    }

    /// Case names that are not built in are also looked up here, with or
    /// without a `.m` extension.
    pub fn with_case_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.case_dir = Some(dir.into());
        self
    }

    /// Built-in names plus the `.m` files in the case directory.
    pub fn case_names(&self) -> Vec<String> {
        let mut names: Vec<String> = BUILTIN_CASES.iter().map(|s| s.to_string()).collect();
        if let Some(entries) = self.case_dir.as_ref().and_then(|d| std::fs::read_dir(d).ok()) {
            let mut extra: Vec<String> = entries
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "m"))
                .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .filter(|n| !names.contains(n))
                .collect();
            extra.sort();
            names.extend(extra);
        }
        names
    }

    fn load(&self, case_path: &str) -> Result<GridCase, GridError> {
        if let Some(dir) = &self.case_dir {
            if builtin_case(case_path).is_err() && Path::new(case_path).is_relative() {
                for candidate in [dir.join(case_path), dir.join(format!("{case_path}.m"))] {
                    if candidate.is_file() {
                        return load_case(&candidate.to_string_lossy());
                    }
                }
            }
        }
        load_case(case_path)
    }

    pub fn specs(&self) -> &[ToolSpec] {
        &self.specs
    }

    pub fn memory(&self) -> &Arc<StudyMemory> {
        &self.memory
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn active_backend(&self) -> String {
        self.backends.lock().unwrap_or_else(|e| e.into_inner()).active().to_string()
    }

    /// Baseline for a case with mitigations applied, cached across calls.
    pub fn baseline(&self, case_path: &str, mitigations: &[ShuntMitigation]) -> Result<Arc<Baseline>, CiaError> {
        let key = format!("{}|{:?}", case_path.trim().to_ascii_lowercase(), mitigations);
        if let Some((_, b)) = self.baselines.lock().unwrap_or_else(|e| e.into_inner()).iter().find(|(k, _)| *k == key) {
            return Ok(b.clone());
        }
        let case = apply_mitigations(&self.load(case_path)?, mitigations)?;
        let b = Arc::new(Baseline::new(case, &self.cfg)?);
        let mut cache = self.baselines.lock().unwrap_or_else(|e| e.into_inner());
        if cache.len() >= BASELINE_CACHE_LIMIT {
            cache.remove(0);
        }
        cache.push((key, b.clone()));
        Ok(b)
    }

    pub fn execute(&self, name: &str, args: &Value, session_id: &str) -> Result<ToolOutcome, ToolError> {
        let errors = validate_args(name, args)?;
        if !errors.is_empty() {
            return Err(ToolError::Schema {
                tool: name.to_string(),
                errors,
            });
        }
        let mut out = ToolOutcome {
            result: ToolResult {
                tool_name: name.to_string(),
                ok: true,
                payload: Value::Null,
                error: None,
                grounding: is_analytic(name),
            },
            report: None,
            capacity: None,
            memory: None,
        };
        out.result.payload = match name {
            "list_backends" => {
                let b = self.backends.lock().unwrap_or_else(|e| e.into_inner());
                json!({"backends": b.registered(), "active": b.active()})
            }
            "list_cases" => json!({"cases": self.case_names()}),
            "set_backend" => {
                let want: String = field(args, "backend").unwrap_or_default();
                let mut b = self.backends.lock().unwrap_or_else(|e| e.into_inner());
                b.set(&want)?;
                json!({"success": true, "active": b.active()})
            }
            "run_powerflow" => self.run_powerflow(args)?,
            "run_opf" => self.run_opf(args)?,
            "inspect_violations" => self.inspect_violations(args)?,
            "run_contingency" => self.run_contingency(args)?,
            "run_cia" | "run_cia_with_mitigation" => {
                let report = self.run_cia(name, args)?;
                out.memory = Some(
                    self.memory
                        .append(NewStudy::from_report(session_id, &report))
                        .map_err(|e| e.to_string()),
                );
                let payload = serde_json::to_value(&report).expect("report serializes");
                out.report = Some(report);
                payload
            }
            "find_max_capacity" => {
                let r = self.find_max_capacity(args)?;
                out.memory = Some(
                    self.memory
                        .append(NewStudy::from_capacity(session_id, &r))
                        .map_err(|e| e.to_string()),
                );
                let payload = serde_json::to_value(&r).expect("capacity result serializes");
                out.capacity = Some(r);
                payload
            }
            "query_network_data" => {
                let case_path: String = field(args, "case_path").unwrap_or_default();
                network_tables(&self.load(&case_path).map_err(grid_err(name))?)
            }
            other => return Err(ToolError::UnknownTool(other.to_string())),
        };
        if let Some(Err(w)) = &out.memory {
            log::warn!("study not persisted: {w}");
            out.result.payload["persistence_warning"] = json!(w);
        }
        Ok(out)
    }

    /// Like [`execute`](Self::execute) but folds errors into a failed result.
    pub fn execute_total(&self, name: &str, args: &Value, session_id: &str) -> ToolOutcome {
        match self.execute(name, args, session_id) {
            Ok(o) => o,
            Err(e) => ToolOutcome {
                result: ToolResult::failure(name, &e),
                report: None,
                capacity: None,
                memory: None,
            },
        }
    }

    fn case_arg(&self, tool: &str, args: &Value) -> Result<GridCase, ToolError> {
        let case_path: String = field(args, "case_path").unwrap_or_default();
        self.load(&case_path).map_err(grid_err(tool))
    }

    fn regime_arg(args: &Value) -> Regime {
        match args.get("regime").and_then(Value::as_str) {
            Some("EMERGENCY") => Regime::Emergency,
            _ => Regime::Normal,
        }
    }

    fn run_powerflow(&self, args: &Value) -> Result<Value, ToolError> {
        let case = self.case_arg("run_powerflow", args)?;
        let sol = solve_ac_powerflow(&case, &self.cfg.pf);
        let violations = sol
            .converged
            .then(|| inspect(&sol, &default_limits(Regime::Normal), &self.cfg.bands).ok())
            .flatten();
        Ok(json!({
            "case": case.name,
            "converged": sol.converged,
            "iterations": sol.iterations,
            "max_mismatch_pu": sol.max_mismatch,
            "diagnostic": sol.diagnostic,
            "bus_results": sol.bus_voltages,
            "branch_flows": sol.branch_flows,
            "pv_to_pq": sol.pv_to_pq,
            "violations": violations,
        }))
    }

    fn run_opf(&self, args: &Value) -> Result<Value, ToolError> {
        let case = self.case_arg("run_opf", args)?;
        let limits = default_limits(Self::regime_arg(args));
        let r = redispatch(&case, &limits).map_err(grid_err("run_opf"))?;
        let post = r
            .post_solution
            .converged
            .then(|| inspect(&r.post_solution, &limits, &self.cfg.bands).ok())
            .flatten();
        Ok(json!({
            "case": case.name,
            "converged": r.converged,
            "iterations": r.iterations,
            "dispatch_changes": r.dispatch_changes,
            "max_loading_history_pct": r.max_loading_history,
            "residual_overloads": r.residual_overloads,
            "post_violations": post,
            "topology_changed": false,
        }))
    }

    fn inspect_violations(&self, args: &Value) -> Result<Value, ToolError> {
        let case = self.case_arg("inspect_violations", args)?;
        let mut limits: LimitSet = default_limits(Self::regime_arg(args));
        if args.get("check_angle_difference").and_then(Value::as_bool).unwrap_or(false) {
            limits.angle_diff_max = Some(args.get("angle_max_deg").and_then(Value::as_f64).unwrap_or(30.0));
        }
        let sol = solve_ac_powerflow(&case, &self.cfg.pf);
        let report = inspect(&sol, &limits, &self.cfg.bands).map_err(grid_err("inspect_violations"))?;
        Ok(json!({"case": case.name, "converged": sol.converged, "report": report}))
    }

    fn run_contingency(&self, args: &Value) -> Result<Value, ToolError> {
        let case = self.case_arg("run_contingency", args)?;
        let base = solve_ac_powerflow(&case, &self.cfg.pf);
        if !base.converged {
            return Err(ToolError::Execution {
                tool: "run_contingency".into(),
                source: CiaError::BaselineDiverged(base.diagnostic.unwrap_or_default()),
            });
        }
        let elements = n1_elements(&case);
        let results = n1_sweep(&case, &elements, &self.cfg, Some(&base));
        let failing: Vec<_> = results.iter().filter(|r| r.failing()).collect();
        let count = |s| results.iter().filter(|r| r.status == s).count();
        Ok(json!({
            "case": case.name,
            "regime": "EMERGENCY",
            "checked": results.len(),
            "passed": results.len() - failing.len(),
            "failed": failing.len(),
            "diverged": count(ContingencyStatus::Diverged),
            "islanded_load": count(ContingencyStatus::IslandedLoad),
            "failing_contingencies": failing,
        }))
    }

    fn run_cia(&self, tool: &str, args: &Value) -> Result<CiaReport, ToolError> {
        let case_path: String = field(args, "case_path").unwrap_or_default();
        let conn: ConnectionArgs = field(args, "connection").expect("schema-checked connection");
        let req = conn.request();
        req.validate().map_err(grid_err(tool))?;
        let mitigations: Vec<ShuntMitigation> = field(args, "mitigations").unwrap_or_default();
        let raw = self.load(&case_path).map_err(grid_err(tool))?;
        // every referenced bus is checked before any simulation runs
        for m in &mitigations {
            if !raw.has_bus(m.bus) {
                return Err(grid_err(tool)(raw.unknown_bus(m.bus)));
            }
        }
        if !raw.has_bus(req.bus) {
            return Err(grid_err(tool)(raw.unknown_bus(req.bus)));
        }
        let mut cfg = self.cfg.clone();
        if let Some(v) = args.get("enable_contingency").and_then(Value::as_bool) {
            cfg.enable_contingency = v;
        }
        if let Some(v) = args.get("enable_transient").and_then(Value::as_bool) {
            cfg.enable_transient = v;
        }
        if let Some(v) = args.get("enable_scr").and_then(Value::as_bool) {
            cfg.enable_emt = v;
        }
        let baseline = self.baseline(&case_path, &mitigations).map_err(exec_err(tool))?;
        run_cia_on(&baseline, &req, &cfg).map_err(exec_err(tool))
    }

    fn find_max_capacity(&self, args: &Value) -> Result<CapacityResult, ToolError> {
        const TOOL: &str = "find_max_capacity";
        let case_path: String = field(args, "case_path").unwrap_or_default();
        let bus = BusId(field(args, "bus").unwrap_or(0));
        let ctype: ConnectionType = field(args, "connection_type").expect("schema-checked type");
        let mw_min = field(args, "mw_min").unwrap_or(0.0);
        let mw_max = field(args, "mw_max").unwrap_or(500.0);
        let tol_mw = field(args, "tol_mw").unwrap_or(1.0);
        crate::capacity::check_range(mw_min, mw_max, tol_mw).map_err(exec_err(TOOL))?;
        let raw = self.load(&case_path).map_err(grid_err(TOOL))?;
        if !raw.has_bus(bus) {
            return Err(grid_err(TOOL)(raw.unknown_bus(bus)));
        }
        let baseline = self.baseline(&case_path, &[]).map_err(exec_err(TOOL))?;
        let opts = SearchOptions { tol_mw, probe_mw: vec![] };
        find_max_capacity_on(&baseline, bus, ctype, mw_min, mw_max, &opts, &self.cfg).map_err(exec_err(TOOL))
    }
}

/// Equipment tables of a case. Bus voltages appear only as regulation
/// setpoints, never as a solved state.
pub fn network_tables(case: &GridCase) -> Value {
    let load = case.bus_load();
    let buses: Vec<Value> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let kind = serde_json::to_value(b.kind).expect("bus kind serializes");
            let setpoint = (b.kind != BusKind::PQ).then_some(b.v_setpoint);
            json!({
                "id": b.id,
                "kind": kind,
                "base_kv": b.base_kv,
                "v_setpoint_pu": setpoint,
                "load_mw": load[i].0 * case.base_mva,
                "load_mvar": load[i].1 * case.base_mva,
            })
        })
        .collect();
    let branches: Vec<Value> = case
        .branches
        .iter()
        .map(|b| {
            json!({
                "id": b.id, "from_bus": b.from_bus, "to_bus": b.to_bus,
                "r_pu": b.r, "x_pu": b.x, "b_pu": b.b_charging, "tap": b.tap, "shift_deg": b.shift_deg,
                "rate_a_mva": b.rate_a, "rate_b_mva": b.rate_b, "in_service": b.in_service,
            })
        })
        .collect();
    let generators: Vec<Value> = case
        .generators
        .iter()
        .map(|g| {
            json!({
                "id": g.id, "bus": g.bus, "p_mw": g.p_mw, "p_min_mw": g.p_min, "p_max_mw": g.p_max,
                "q_min_mvar": g.q_min, "q_max_mvar": g.q_max, "mva_rating": g.mva_rating, "in_service": g.in_service,
            })
        })
        .collect();
    json!({
        "case": case.name,
        "base_mva": case.base_mva,
        "solved": false,
        "buses": buses,
        "branches": branches,
        "generators": generators,
        "shunts": case.shunts,
        "counts": {"buses": case.buses.len(), "branches": case.branches.len(), "generators": case.generators.len()},
    })
}
