//! Short-circuit strength from the admittance diagonal.

use crate::error::GridError;
use crate::model::{BusId, GridCase};
use crate::ybus::AdmittanceMatrix;

/// Short-circuit MVA proxy |Y_bb| * S_base, assuming |V_b| of about 1 pu.
pub fn short_circuit_proxy(case: &GridCase, bus: BusId) -> Result<f64, GridError> {
    let i = case.bus_index().get(bus).ok_or_else(|| case.unknown_bus(bus))?;
    let y = AdmittanceMatrix::build(case);
    Ok(y.diag(i).norm() * case.base_mva)
}

/// Short-circuit ratio at a bus for an inverter-based injection of `s_ibr_mva`.
/// Returns `None` when there is no IBR capacity to compare against.
pub fn short_circuit_ratio(s_sc_mva: f64, s_ibr_mva: f64) -> Option<f64> {
    (s_ibr_mva > 0.0).then(|| s_sc_mva / s_ibr_mva)
}
