//! Bus admittance matrix.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{BusId, GridCase};

/// Sparse row storage of the bus admittance matrix, per unit on the system
/// base. Rows and columns follow the case's bus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceMatrix {
    pub bus_ids: Vec<BusId>,
    rows: Vec<Vec<(usize, Complex64)>>,
}

/// Series and shunt terms contributed by one branch: (y_ff, y_ft, y_tf, y_tt).
pub fn branch_admittances(r: f64, x: f64, b: f64, tap: f64, shift_deg: f64) -> [Complex64; 4] {
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
    let bc = Complex64::new(0.0, b / 2.0);
    let t = Complex64::from_polar(tap, shift_deg.to_radians());
    let ytt = ys + bc;
    let yff = ytt / (tap * tap);
    let yft = -ys / t.conj();
    let ytf = -ys / t;
    [yff, yft, ytf, ytt]
}

impl AdmittanceMatrix {
    pub fn build(case: &GridCase) -> Self {
        let idx = case.bus_index();
        let n = case.buses.len();
        let mut acc: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); n];
        for br in case.branches.iter().filter(|b| b.in_service) {
            let (Some(f), Some(t)) = (idx.get(br.from_bus), idx.get(br.to_bus)) else {
                continue;
            };
            let [yff, yft, ytf, ytt] = branch_admittances(br.r, br.x, br.b_charging, br.tap, br.shift_deg);
            *acc[f].entry(f).or_default() += yff;
            *acc[f].entry(t).or_default() += yft;
            *acc[t].entry(f).or_default() += ytf;
            *acc[t].entry(t).or_default() += ytt;
        }
        for s in &case.shunts {
            if let Some(i) = idx.get(s.bus) {
                *acc[i].entry(i).or_default() += Complex64::new(s.g_mw, s.q_mvar) / case.base_mva;
            }
        }
        // every bus keeps a diagonal slot, even if isolated
        for (i, row) in acc.iter_mut().enumerate() {
            row.entry(i).or_default();
        }
        Self {
            bus_ids: case.buses.iter().map(|b| b.id).collect(),
            rows: acc.into_iter().map(|r| r.into_iter().collect()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        match self.rows[i].binary_search_by_key(&j, |e| e.0) {
            Ok(p) => self.rows[i][p].1,
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn diag(&self, i: usize) -> Complex64 {
        self.get(i, i)
    }

    pub fn index_of(&self, bus: BusId) -> Option<usize> {
        self.bus_ids.iter().position(|b| *b == bus)
    }

    /// y = Y x
    pub fn mul(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|(j, y)| y * x[*j]).sum())
            .collect()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

pub fn build_ybus(case: &GridCase) -> AdmittanceMatrix {
    AdmittanceMatrix::build(case)
}
