//! AC power flow: full Newton-Raphson in polar coordinates.
//!
//! The Jacobian is assembled sparse from the admittance rows and factored
//! with a sparse LU each iteration. Generator reactive limits are enforced
//! by switching violating PV buses to PQ; a bus switches at most once per
//! solve and never switches back.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{BranchId, BusId, BusKind, GridCase};
use crate::ybus::{branch_admittances, AdmittanceMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowOptions {
    /// Convergence tolerance on the largest power mismatch, pu.
    pub tol: f64,
    pub max_iter: usize,
    pub enforce_q_limits: bool,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 30,
            enforce_q_limits: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusResult {
    pub bus: BusId,
    pub vm: f64,
    pub va_rad: f64,
    /// Bus type the final iterate was solved with (after any PV to PQ switch).
    pub solved_as: BusKind,
    /// Net injection computed from the voltages, MW / MVAr.
    pub p_inj_mw: f64,
    pub q_inj_mvar: f64,
    /// Generation implied at the bus: net injection plus load.
    pub p_gen_mw: f64,
    pub q_gen_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub id: BranchId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub in_service: bool,
    pub p_from_mw: f64,
    pub q_from_mvar: f64,
    pub p_to_mw: f64,
    pub q_to_mvar: f64,
    pub rate_a: f64,
    pub rate_b: f64,
    /// Larger end apparent power over Rate A, percent. `None` when unrated.
    pub loading_pct: Option<f64>,
}

impl BranchFlow {
    pub fn s_max_mva(&self) -> f64 {
        self.p_from_mw
            .hypot(self.q_from_mvar)
            .max(self.p_to_mw.hypot(self.q_to_mvar))
    }

    /// Loading against the normal or emergency rating, percent.
    pub fn loading_against(&self, emergency: bool) -> Option<f64> {
        let rate = if emergency { self.rate_b } else { self.rate_a };
        (rate > 0.0).then(|| self.s_max_mva() / rate * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub converged: bool,
    pub iterations: usize,
    /// Largest active/reactive mismatch of the final iterate, pu.
    pub max_mismatch: f64,
    pub bus_voltages: Vec<BusResult>,
    pub branch_flows: Vec<BranchFlow>,
    /// PV buses switched to PQ by reactive limits.
    #[serde(default)]
    pub pv_to_pq: Vec<BusId>,
    #[serde(default)]
    pub diagnostic: Option<String>,
}

impl PowerFlowSolution {
    pub fn bus(&self, id: BusId) -> Option<&BusResult> {
        self.bus_voltages.iter().find(|b| b.bus == id)
    }

    pub fn complex_voltages(&self) -> Vec<Complex64> {
        self.bus_voltages
            .iter()
            .map(|b| Complex64::from_polar(b.vm, b.va_rad))
            .collect()
    }

    fn failed(case: &GridCase, msg: String) -> Self {
        Self {
            converged: false,
            iterations: 0,
            max_mismatch: f64::INFINITY,
            bus_voltages: case
                .buses
                .iter()
                .map(|b| BusResult {
                    bus: b.id,
                    vm: b.v_setpoint,
                    va_rad: 0.0,
                    solved_as: b.kind,
                    p_inj_mw: 0.0,
                    q_inj_mvar: 0.0,
                    p_gen_mw: 0.0,
                    q_gen_mvar: 0.0,
                })
                .collect(),
            branch_flows: Vec::new(),
            pv_to_pq: Vec::new(),
            diagnostic: Some(msg),
        }
    }
}

pub fn solve_ac_powerflow(case: &GridCase, opts: &PowerFlowOptions) -> PowerFlowSolution {
    solve_with_start(case, opts, None)
}

/// Solves starting from `start` (angles and magnitudes, bus order). Regulated
/// buses are reset to their setpoints.
pub fn solve_ac_powerflow_from(case: &GridCase, opts: &PowerFlowOptions, start: &[Complex64]) -> PowerFlowSolution {
    solve_with_start(case, opts, Some(start))
}

struct BusSetup {
    kinds: Vec<BusKind>,
    /// Fixed specified injection per bus, pu (regulating generator Q excluded).
    s_fixed: Vec<Complex64>,
    /// Load per bus, pu.
    load: Vec<Complex64>,
    /// Reactive limits of regulating units per bus, pu.
    q_lim: Vec<(f64, f64)>,
}

fn setup(case: &GridCase) -> BusSetup {
    let idx = case.bus_index();
    let n = case.buses.len();
    let base = case.base_mva;
    let mut regulated = vec![false; n];
    let mut s_fixed = vec![Complex64::new(0.0, 0.0); n];
    let mut load = vec![Complex64::new(0.0, 0.0); n];
    let mut q_lim = vec![(0.0, 0.0); n];
    for g in case.generators.iter().filter(|g| g.in_service) {
        let Some(i) = idx.get(g.bus) else { continue };
        let kind = case.buses[i].kind;
        if g.regulating && kind != BusKind::PQ {
            regulated[i] = true;
            s_fixed[i].re += g.p_mw / base;
            q_lim[i].0 += g.q_min / base;
            q_lim[i].1 += g.q_max / base;
        } else {
            s_fixed[i] += Complex64::new(g.p_mw, g.q_mvar) / base;
        }
    }
    for l in &case.loads {
        if let Some(i) = idx.get(l.bus) {
            let s = Complex64::new(l.p_mw, l.q_mvar) / base;
            s_fixed[i] -= s;
            load[i] += s;
        }
    }
    let kinds = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| match b.kind {
            BusKind::Slack => BusKind::Slack,
            BusKind::PV if regulated[i] => BusKind::PV,
            _ => BusKind::PQ,
        })
        .collect();
    BusSetup {
        kinds,
        s_fixed,
        load,
        q_lim,
    }
}

fn solve_with_start(case: &GridCase, opts: &PowerFlowOptions, start: Option<&[Complex64]>) -> PowerFlowSolution {
    let islands = case.islands();
    if islands.len() > 1 {
        return PowerFlowSolution::failed(case, format!("network is islanded into {} components", islands.len()));
    }
    let ybus = AdmittanceMatrix::build(case);
    let mut bs = setup(case);
    let n = case.buses.len();
    let mut vm: Vec<f64> = Vec::with_capacity(n);
    let mut va: Vec<f64> = Vec::with_capacity(n);
    for (i, b) in case.buses.iter().enumerate() {
        let regulated = bs.kinds[i] != BusKind::PQ;
        match start {
            Some(s) if s.len() == n => {
                va.push(s[i].arg());
                vm.push(if regulated { b.v_setpoint } else { s[i].norm() });
            }
            _ => {
                va.push(0.0);
                vm.push(if regulated { b.v_setpoint } else { 1.0 });
            }
        }
    }
    // specified Q of switched buses, pu
    let mut q_fixed_switched = vec![0.0; n];
    let mut switched: Vec<usize> = Vec::new();
    let mut total_iter = 0;
    let (mut converged, mut mismatch, mut diag);
    loop {
        let spec: Vec<Complex64> = (0..n)
            .map(|i| bs.s_fixed[i] + Complex64::new(0.0, q_fixed_switched[i]))
            .collect();
        let out = newton(&ybus, &bs.kinds, &spec, &mut vm, &mut va, opts);
        total_iter += out.iterations;
        converged = out.converged;
        mismatch = out.mismatch;
        diag = out.diagnostic;
        if !converged || !opts.enforce_q_limits {
            break;
        }
        let v: Vec<Complex64> = vm.iter().zip(&va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
        let ibus = ybus.mul(&v);
        let mut newly = Vec::new();
        for i in 0..n {
            if bs.kinds[i] != BusKind::PV {
                continue;
            }
            // Q injected by the regulating units at this bus
            let q_calc = (v[i] * ibus[i].conj()).im;
            let q_reg = q_calc - bs.s_fixed[i].im;
            let (qmin, qmax) = bs.q_lim[i];
            let eps = 1e-6;
            if q_reg > qmax + eps {
                q_fixed_switched[i] = qmax;
                newly.push(i);
            } else if q_reg < qmin - eps {
                q_fixed_switched[i] = qmin;
                newly.push(i);
            }
        }
        if newly.is_empty() {
            break;
        }
        for &i in &newly {
            bs.kinds[i] = BusKind::PQ;
            switched.push(i);
        }
    }

    let v: Vec<Complex64> = vm.iter().zip(&va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
    let base = case.base_mva;
    let ibus = ybus.mul(&v);
    let bus_voltages = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let s = v[i] * ibus[i].conj() * base;
            let gen = s + bs.load[i] * base;
            BusResult {
                bus: b.id,
                vm: vm[i],
                va_rad: va[i],
                solved_as: bs.kinds[i],
                p_inj_mw: s.re,
                q_inj_mvar: s.im,
                p_gen_mw: gen.re,
                q_gen_mvar: gen.im,
            }
        })
        .collect();
    let idx = case.bus_index();
    let branch_flows = case
        .branches
        .iter()
        .map(|br| {
            let (f, t) = (idx.get(br.from_bus).unwrap(), idx.get(br.to_bus).unwrap());
            let (sf, st) = if br.in_service {
                let [yff, yft, ytf, ytt] = branch_admittances(br.r, br.x, br.b_charging, br.tap, br.shift_deg);
                let i_f = yff * v[f] + yft * v[t];
                let i_t = ytf * v[f] + ytt * v[t];
                (v[f] * i_f.conj() * base, v[t] * i_t.conj() * base)
            } else {
                (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
            };
            let s_max = sf.norm().max(st.norm());
            BranchFlow {
                id: br.id,
                from_bus: br.from_bus,
                to_bus: br.to_bus,
                in_service: br.in_service,
                p_from_mw: sf.re,
                q_from_mvar: sf.im,
                p_to_mw: st.re,
                q_to_mvar: st.im,
                rate_a: br.rate_a,
                rate_b: br.rate_b,
                loading_pct: (br.rate_a > 0.0).then(|| s_max / br.rate_a * 100.0),
            }
        })
        .collect();
    PowerFlowSolution {
        converged,
        iterations: total_iter,
        max_mismatch: mismatch,
        bus_voltages,
        branch_flows,
        pv_to_pq: switched.into_iter().map(|i| case.buses[i].id).collect(),
        diagnostic: diag,
    }
}

struct NewtonOutcome {
    converged: bool,
    iterations: usize,
    mismatch: f64,
    diagnostic: Option<String>,
}

fn newton(
    ybus: &AdmittanceMatrix,
    kinds: &[BusKind],
    spec: &[Complex64],
    vm: &mut [f64],
    va: &mut [f64],
    opts: &PowerFlowOptions,
) -> NewtonOutcome {
    let n = kinds.len();
    let pvpq: Vec<usize> = (0..n).filter(|&i| kinds[i] != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| kinds[i] == BusKind::PQ).collect();
    let mut col_theta = vec![usize::MAX; n];
    let mut col_vm = vec![usize::MAX; n];
    for (k, &i) in pvpq.iter().enumerate() {
        col_theta[i] = k;
    }
    for (k, &i) in pq.iter().enumerate() {
        col_vm[i] = pvpq.len() + k;
    }
    let dim = pvpq.len() + pq.len();

    let mut iterations = 0;
    loop {
        let v: Vec<Complex64> = vm.iter().zip(va.iter()).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
        let ibus = ybus.mul(&v);
        let mis: Vec<Complex64> = (0..n).map(|i| v[i] * ibus[i].conj() - spec[i]).collect();
        let mut f = vec![0.0; dim];
        for &i in &pvpq {
            f[col_theta[i]] = mis[i].re;
        }
        for &i in &pq {
            f[col_vm[i]] = mis[i].im;
        }
        let norm = f.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if !norm.is_finite() {
            return NewtonOutcome {
                converged: false,
                iterations,
                mismatch: norm,
                diagnostic: Some("mismatch became non-finite".into()),
            };
        }
        if norm <= opts.tol {
            return NewtonOutcome {
                converged: true,
                iterations,
                mismatch: norm,
                diagnostic: None,
            };
        }
        if iterations >= opts.max_iter {
            return NewtonOutcome {
                converged: false,
                iterations,
                mismatch: norm,
                diagnostic: Some(format!("no convergence after {iterations} iterations (mismatch {norm:.3e} pu)")),
            };
        }
        iterations += 1;

        let mut trips: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(4 * ybus.nnz());
        for i in 0..n {
            if kinds[i] == BusKind::Slack {
                continue;
            }
            let vn_i = v[i] / vm[i];
            for &(j, y) in ybus.row(i) {
                if kinds[j] == BusKind::Slack {
                    continue;
                }
                let (ds_dth, ds_dvm) = if i == j {
                    let d_th = Complex64::i() * v[i] * (ibus[i] - y * v[i]).conj();
                    let d_vm = v[i] * (y * vn_i).conj() + ibus[i].conj() * vn_i;
                    (d_th, d_vm)
                } else {
                    let d_th = -Complex64::i() * v[i] * (y * v[j]).conj();
                    let d_vm = v[i] * (y * v[j] / vm[j]).conj();
                    (d_th, d_vm)
                };
                let rp = col_theta[i];
                trips.push(Triplet::new(rp, col_theta[j], ds_dth.re));
                if kinds[j] == BusKind::PQ {
                    trips.push(Triplet::new(rp, col_vm[j], ds_dvm.re));
                }
                if kinds[i] == BusKind::PQ {
                    let rq = col_vm[i];
                    trips.push(Triplet::new(rq, col_theta[j], ds_dth.im));
                    if kinds[j] == BusKind::PQ {
                        trips.push(Triplet::new(rq, col_vm[j], ds_dvm.im));
                    }
                }
            }
        }
        let jac = match SparseColMat::<usize, f64>::try_new_from_triplets(dim, dim, &trips) {
            Ok(m) => m,
            Err(e) => {
                return NewtonOutcome {
                    converged: false,
                    iterations,
                    mismatch: norm,
                    diagnostic: Some(format!("jacobian assembly failed: {e:?}")),
                }
            }
        };
        let lu = match jac.sp_lu() {
            Ok(lu) => lu,
            Err(e) => {
                return NewtonOutcome {
                    converged: false,
                    iterations,
                    mismatch: norm,
                    diagnostic: Some(format!("singular jacobian: {e:?}")),
                }
            }
        };
        let mut rhs = Mat::<f64>::from_fn(dim, 1, |r, _| f[r]);
        lu.solve_in_place(rhs.as_mut());
        let dx: Vec<f64> = (0..dim).map(|r| rhs[(r, 0)]).collect();
        if dx.iter().any(|x| !x.is_finite()) {
            return NewtonOutcome {
                converged: false,
                iterations,
                mismatch: norm,
                diagnostic: Some("singular jacobian (non-finite update)".into()),
            };
        }
        for &i in &pvpq {
            va[i] -= dx[col_theta[i]];
        }
        for &i in &pq {
            vm[i] -= dx[col_vm[i]];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matpower::parse_matpower_case;

    fn two_bus(pd: f64) -> GridCase {
        parse_matpower_case(&format!(
            "mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
2 1 {pd} 0 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [1 0 0 300 -300 1 100 1 500 0];
mpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1];"
        ))
        .unwrap()
    }

    #[test]
    fn no_load_two_bus_is_trivial() {
        let sol = solve_ac_powerflow(&two_bus(0.0), &PowerFlowOptions::default());
        assert!(sol.converged);
        assert!(sol.iterations <= 2);
        let b2 = &sol.bus_voltages[1];
        assert!((b2.vm - 1.0).abs() < 1e-12 && b2.va_rad.abs() < 1e-12);
        assert!(sol.branch_flows[0].p_from_mw.abs() < 1e-9);
    }

    #[test]
    fn islanded_network_is_not_solved() {
        let mut case = two_bus(10.0);
        case.branches[0].in_service = false;
        let sol = solve_ac_powerflow(&case, &PowerFlowOptions::default());
        assert!(!sol.converged);
        assert!(sol.diagnostic.unwrap().contains("islanded"));
    }

    #[test]
    fn infeasible_load_reports_non_convergence() {
        // far beyond the nose of the PV curve for x = 0.1 pu (max ~500 MW)
        let sol = solve_ac_powerflow(&two_bus(5000.0), &PowerFlowOptions::default());
        assert!(!sol.converged);
        assert!(sol.diagnostic.is_some());
    }

    #[test]
    fn reactive_limit_switches_pv_bus() {
        let text = "mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
2 2 0 0 0 0 1 1 0 230 1 1.1 0.9;
3 1 80 60 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
1 0 0 300 -300 1.0 100 1 500 0;
2 20 0 5 -5 1.05 100 1 100 0;
];
mpc.branch = [
1 2 0.01 0.1 0 0 0 0 0 0 1;
2 3 0.01 0.1 0 0 0 0 0 0 1;
1 3 0.01 0.1 0 0 0 0 0 0 1;
];";
        let case = parse_matpower_case(text).unwrap();
        let sol = solve_ac_powerflow(&case, &PowerFlowOptions::default());
        assert!(sol.converged);
        assert_eq!(sol.pv_to_pq, vec![BusId(2)]);
        let b2 = sol.bus(BusId(2)).unwrap();
        assert!((b2.q_gen_mvar - 5.0).abs() < 1e-5, "{}", b2.q_gen_mvar);
        assert!(b2.vm < 1.05);

        let off = solve_ac_powerflow(
            &case,
            &PowerFlowOptions {
                enforce_q_limits: false,
                ..Default::default()
            },
        );
        assert!(off.pv_to_pq.is_empty());
        assert!((off.bus(BusId(2)).unwrap().vm - 1.05).abs() < 1e-12);
    }

    #[test]
    fn solve_is_deterministic() {
        let case = two_bus(80.0);
        let a = solve_ac_powerflow(&case, &PowerFlowOptions::default());
        let b = solve_ac_powerflow(&case, &PowerFlowOptions::default());
        assert_eq!(a, b);
    }
}
