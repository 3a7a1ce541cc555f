use chrono::{DateTime, Utc};
use cia_core::llm::ChatModel;
use cia_core::memory::StudyMemory;
use cia_grid::{parse_matpower_case, solve_ac_powerflow, PowerFlowOptions};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerStatus {
    Ok,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmBackendStatus {
    Ok,
    Unreachable,
    Unconfigured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    #[serde(rename = "ok")]
    Ok,
    #[serde(rename = "failed-self-test")]
    FailedSelfTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemoryStatus {
    #[serde(rename = "ok")]
    Ok,
    #[serde(rename = "io-error")]
    IoError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub server: ServerStatus,
    pub llm_backend: LlmBackendStatus,
    pub solver: SolverStatus,
    pub memory: MemoryStatus,
    pub timestamp: DateTime<Utc>,
    /// Why a component is not ok.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

impl HealthStatus {
    pub fn all_ok(&self) -> bool {
        self.llm_backend == LlmBackendStatus::Ok && self.solver == SolverStatus::Ok && self.memory == MemoryStatus::Ok
    }
}

const SELF_TEST_CASE: &str = "mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
2 1 100 0 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [1 0 0 999 -999 1 100 1 999 0];
mpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1];";

/// Solves a lossless two-bus line carrying 1 pu and compares the load bus
/// voltage with the closed form.
pub fn solver_self_test() -> Result<(), String> {
    let case = parse_matpower_case(SELF_TEST_CASE).map_err(|e| e.to_string())?;
    let sol = solve_ac_powerflow(&case, &PowerFlowOptions::default());
    if !sol.converged {
        return Err(format!("self-test did not converge: {}", sol.diagnostic.unwrap_or_default()));
    }
    let (p, x) = (1.0_f64, 0.1_f64);
    let expected = ((1.0 + (1.0 - 4.0 * x * x * p * p).sqrt()) / 2.0).sqrt();
    let got = sol.bus_voltages[1].vm;
    if (got - expected).abs() > 1e-6 {
        return Err(format!("self-test voltage {got} differs from {expected}"));
    }
    Ok(())
}

/// Blocking: runs the solver self-test and probes the LLM endpoint.
pub fn check(memory: &StudyMemory, llm: Option<&dyn ChatModel>) -> HealthStatus {
    let mut details = Vec::new();
    let llm_backend = match llm {
        None => LlmBackendStatus::Unconfigured,
        Some(m) => match m.probe() {
            Ok(()) => LlmBackendStatus::Ok,
            Err(e) => {
                details.push(format!("llm: {e}"));
                LlmBackendStatus::Unreachable
            }
        },
    };
    let solver = match solver_self_test() {
        Ok(()) => SolverStatus::Ok,
        Err(e) => {
            details.push(format!("solver: {e}"));
            SolverStatus::FailedSelfTest
        }
    };
    let memory = match memory.check_storage() {
        Ok(()) => MemoryStatus::Ok,
        Err(e) => {
            details.push(format!("memory: {e}"));
            MemoryStatus::IoError
        }
    };
    HealthStatus {
        server: ServerStatus::Ok,
        llm_backend,
        solver,
        memory,
        timestamp: Utc::now(),
        details,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_test_passes() {
        solver_self_test().unwrap();
    }

    #[test]
    fn status_spellings() {
        let h = check(&StudyMemory::in_memory(), None);
        let v = serde_json::to_value(&h).unwrap();
        assert_eq!(v["server"], "ok");
        assert_eq!(v["llm_backend"], "unconfigured");
        assert_eq!(v["solver"], "ok");
        assert_eq!(v["memory"], "ok");
        assert_eq!(serde_json::to_value(SolverStatus::FailedSelfTest).unwrap(), "failed-self-test");
        assert_eq!(serde_json::to_value(MemoryStatus::IoError).unwrap(), "io-error");
    }
}
