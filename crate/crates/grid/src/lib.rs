//! Network model and reference solvers for connection studies.

pub mod cases;
pub mod error;
pub mod inspector;
pub mod matpower;
pub mod model;
pub mod outage;
pub mod powerflow;
pub mod redispatch;
pub mod shortcircuit;
pub mod transient;
pub mod ybus;

pub use cases::{builtin_case, load_case, BUILTIN_CASES};
pub use error::GridError;
pub use inspector::{default_limits, inspect, LimitSet, Regime, Severity, ToleranceBands, Violation, ViolationReport, ViolationType};
pub use matpower::{parse_matpower_case, to_matpower};
pub use model::*;
pub use outage::{apply_outage, n1_elements, restore};
pub use powerflow::{solve_ac_powerflow, BranchFlow, BusResult, PowerFlowOptions, PowerFlowSolution};
pub use redispatch::{redispatch, RedispatchResult};
pub use shortcircuit::{short_circuit_proxy, short_circuit_ratio};
pub use transient::{run_transient, FaultSpec, TransientParams, TransientResult};
pub use ybus::{build_ybus, AdmittanceMatrix};
