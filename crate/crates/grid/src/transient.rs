//! Classical-machine transient stability simulation.
//!
//! Synchronous units are constant EMFs behind transient reactance. Loads and
//! inverter-based units become constant admittances, the network is reduced
//! to the internal machine nodes, and the swing equations are integrated with
//! RK4. A fault is a large shunt admittance at one bus.

use faer::linalg::solvers::Solve;
use faer::{c64, Mat};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::GridError;
use crate::model::{BusId, GenId, GridCase};
use crate::powerflow::{solve_ac_powerflow, PowerFlowOptions};
use crate::ybus::AdmittanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientParams {
    /// Inertia constant, s on machine base.
    pub h_s: f64,
    /// Damping, pu on machine base.
    pub d_pu: f64,
    /// Transient reactance, pu on machine base.
    pub xd_prime_pu: f64,
    /// Fault shunt admittance, pu on system base.
    pub fault_g_pu: f64,
    pub fault_b_pu: f64,
    pub dt_s: f64,
    pub f_nom_hz: f64,
    /// Trajectory sampling interval.
    pub sample_s: f64,
}

impl Default for TransientParams {
    fn default() -> Self {
        Self {
            h_s: 4.0,
            d_pu: 1.0,
            xd_prime_pu: 0.2,
            fault_g_pu: 0.0,
            fault_b_pu: -1000.0,
            dt_s: 0.005,
            f_nom_hz: 60.0,
            sample_s: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    #[default]
    ThreePhaseToGround,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub bus: BusId,
    pub t_on_s: f64,
    pub t_off_s: f64,
    #[serde(default)]
    pub kind: FaultKind,
}

impl FaultSpec {
    /// Three-phase fault applied at 0.1 s and cleared at 0.2 s.
    pub fn default_at(bus: BusId) -> Self {
        Self {
            bus,
            t_on_s: 0.1,
            t_off_s: 0.2,
            kind: FaultKind::ThreePhaseToGround,
        }
    }

    fn validate(&self, horizon_s: f64) -> Result<(), GridError> {
        let ok = self.t_on_s >= 0.0 && self.t_on_s <= self.t_off_s && self.t_off_s <= horizon_s;
        if ok {
            Ok(())
        } else {
            Err(GridError::Transient(format!(
                "fault window [{}, {}] s must satisfy 0 <= on <= off <= horizon ({horizon_s} s)",
                self.t_on_s, self.t_off_s
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientSample {
    pub t_s: f64,
    pub angles_rad: Vec<f64>,
    pub speeds_pu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientResult {
    pub completed: bool,
    pub horizon_s: f64,
    pub generators: Vec<GenId>,
    pub initial_angle_spread_rad: f64,
    pub final_angle_spread_rad: f64,
    pub max_angle_spread_rad: f64,
    pub failure_time_s: Option<f64>,
    pub trajectory: Vec<TransientSample>,
}

impl TransientResult {
    /// Loss-of-synchronism screen: the final spread stays within one turn.
    pub fn stable(&self) -> bool {
        self.completed && self.final_angle_spread_rad <= std::f64::consts::TAU
    }
}

fn spread(angles: &[f64]) -> f64 {
    let (lo, hi) = angles
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    hi - lo
}

struct Machines {
    ids: Vec<GenId>,
    bus: Vec<usize>,
    e_mag: Vec<f64>,
    delta0: Vec<f64>,
    pm: Vec<f64>,
    /// 2H on system base
    m: Vec<f64>,
    /// damping on system base
    d: Vec<f64>,
    /// 1 / (j x'd) on system base
    y_int: Vec<Complex64>,
}

/// Kron-reduced admittance seen from the machine internal nodes.
fn reduce(y_nn: &Mat<c64>, mach: &Machines) -> Result<Mat<c64>, GridError> {
    let n = y_nn.nrows();
    let k = mach.ids.len();
    let mut y_nm = Mat::<c64>::zeros(n, k);
    for j in 0..k {
        y_nm[(mach.bus[j], j)] = -mach.y_int[j];
    }
    let x = y_nn.partial_piv_lu().solve(&y_nm);
    let mut y_red = Mat::<c64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            // Y_mn has a single entry per row: -y_int[i] at its bus
            let prod = -mach.y_int[i] * x[(mach.bus[i], j)];
            let diag = if i == j { mach.y_int[i] } else { Complex64::new(0.0, 0.0) };
            y_red[(i, j)] = diag - prod;
        }
    }
    for i in 0..k {
        for j in 0..k {
            let v = y_red[(i, j)];
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(GridError::Transient("network reduction is singular".into()));
            }
        }
    }
    Ok(y_red)
}

fn electrical_power(y: &Mat<c64>, mach: &Machines, delta: &[f64], out: &mut [f64]) {
    let k = delta.len();
    let e: Vec<Complex64> = (0..k).map(|i| Complex64::from_polar(mach.e_mag[i], delta[i])).collect();
    for i in 0..k {
        let mut inj = Complex64::new(0.0, 0.0);
        for j in 0..k {
            inj += y[(i, j)] * e[j];
        }
        out[i] = (e[i] * inj.conj()).re;
    }
}

pub fn run_transient(case: &GridCase, fault: &FaultSpec, horizon_s: f64, dt_s: f64) -> Result<TransientResult, GridError> {
    run_transient_with(
        case,
        fault,
        horizon_s,
        &TransientParams {
            dt_s,
            ..Default::default()
        },
    )
}

pub fn run_transient_with(
    case: &GridCase,
    fault: &FaultSpec,
    horizon_s: f64,
    params: &TransientParams,
) -> Result<TransientResult, GridError> {
    if !(horizon_s > 0.0) || !(params.dt_s > 0.0) {
        return Err(GridError::Transient("horizon and dt must be positive".into()));
    }
    fault.validate(horizon_s)?;
    let idx = case.bus_index();
    let fbus = idx.get(fault.bus).ok_or_else(|| case.unknown_bus(fault.bus))?;
    let pf = solve_ac_powerflow(case, &PowerFlowOptions::default());
    if !pf.converged {
        return Err(GridError::BaseDiverged(pf.diagnostic.unwrap_or_default()));
    }
    let base = case.base_mva;
    let v = pf.complex_voltages();
    let n = case.buses.len();

    // split each bus's synchronous generation among its machines by rating
    let sync: Vec<_> = case.generators.iter().filter(|g| g.in_service && !g.is_ibr).collect();
    if sync.is_empty() {
        return Err(GridError::Transient("case has no in-service synchronous generator".into()));
    }
    let rating = |g: &crate::model::Generator| if g.mva_rating > 0.0 { g.mva_rating } else { base };
    let mut ibr_s = vec![Complex64::new(0.0, 0.0); n];
    for g in case.generators.iter().filter(|g| g.in_service && g.is_ibr) {
        ibr_s[idx.get(g.bus).unwrap()] += Complex64::new(g.p_mw, g.q_mvar) / base;
    }
    let mut rating_at = vec![0.0; n];
    for g in &sync {
        rating_at[idx.get(g.bus).unwrap()] += rating(g);
    }
    let mut mach = Machines {
        ids: vec![],
        bus: vec![],
        e_mag: vec![],
        delta0: vec![],
        pm: vec![],
        m: vec![],
        d: vec![],
        y_int: vec![],
    };
    for g in &sync {
        let i = idx.get(g.bus).unwrap();
        let res = &pf.bus_voltages[i];
        let s_bus = Complex64::new(res.p_gen_mw, res.q_gen_mvar) / base - ibr_s[i];
        let share = rating(g) / rating_at[i];
        let s = s_bus * share;
        let mbase = rating(g);
        let xd = params.xd_prime_pu * base / mbase;
        let cur = (s / v[i]).conj();
        let e = v[i] + Complex64::new(0.0, xd) * cur;
        mach.ids.push(g.id);
        mach.bus.push(i);
        mach.e_mag.push(e.norm());
        mach.delta0.push(e.arg());
        mach.m.push(2.0 * params.h_s * mbase / base);
        mach.d.push(params.d_pu * mbase / base);
        mach.y_int.push(Complex64::new(1.0, 0.0) / Complex64::new(0.0, xd));
        mach.pm.push(0.0);
    }

    // network with constant-admittance loads and IBR, plus machine reactances
    let ybus = AdmittanceMatrix::build(case);
    let mut y_nn = Mat::<c64>::zeros(n, n);
    for i in 0..n {
        for &(j, y) in ybus.row(i) {
            y_nn[(i, j)] = y;
        }
    }
    let load = case.bus_load();
    for i in 0..n {
        let vm2 = v[i].norm_sqr();
        let s_load = Complex64::new(load[i].0, load[i].1) / base;
        y_nn[(i, i)] += (s_load - ibr_s[i]).conj() / vm2;
    }
    for (k, &i) in mach.bus.iter().enumerate() {
        y_nn[(i, i)] += mach.y_int[k];
    }
    let y_pre = reduce(&y_nn, &mach)?;
    let y_fault = if fault.t_off_s > fault.t_on_s {
        let mut yf = y_nn.clone();
        yf[(fbus, fbus)] += Complex64::new(params.fault_g_pu, params.fault_b_pu);
        Some(reduce(&yf, &mach)?)
    } else {
        None
    };

    let k = mach.ids.len();
    let mut pe = vec![0.0; k];
    electrical_power(&y_pre, &mach, &mach.delta0, &mut pe);
    mach.pm = pe.clone();

    let ws = std::f64::consts::TAU * params.f_nom_hz;
    let deriv = |y: &Mat<c64>, delta: &[f64], omega: &[f64], dd: &mut [f64], dw: &mut [f64], pe: &mut [f64]| {
        electrical_power(y, &mach, delta, pe);
        for i in 0..k {
            dd[i] = ws * (omega[i] - 1.0);
            dw[i] = (mach.pm[i] - pe[i] - mach.d[i] * (omega[i] - 1.0)) / mach.m[i];
        }
    };

    let mut segments: Vec<(f64, f64, &Mat<c64>)> = Vec::new();
    match &y_fault {
        Some(yf) => {
            if fault.t_on_s > 0.0 {
                segments.push((0.0, fault.t_on_s, &y_pre));
            }
            segments.push((fault.t_on_s, fault.t_off_s, yf));
            if horizon_s > fault.t_off_s {
                segments.push((fault.t_off_s, horizon_s, &y_pre));
            }
        }
        None => segments.push((0.0, horizon_s, &y_pre)),
    }

    let mut delta = mach.delta0.clone();
    let mut omega = vec![1.0; k];
    let initial = spread(&delta);
    let mut max_spread = initial;
    let mut trajectory = vec![TransientSample {
        t_s: 0.0,
        angles_rad: delta.clone(),
        speeds_pu: omega.clone(),
    }];
    let mut next_sample = params.sample_s;
    let (mut k1d, mut k1w, mut k2d, mut k2w) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let (mut k3d, mut k3w, mut k4d, mut k4w) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let (mut td, mut tw) = (vec![0.0; k], vec![0.0; k]);
    let mut failure = None;

    'outer: for (t0, t1, y) in segments {
        let steps = ((t1 - t0) / params.dt_s - 1e-9).ceil().max(1.0) as usize;
        let h = (t1 - t0) / steps as f64;
        for s in 0..steps {
            deriv(y, &delta, &omega, &mut k1d, &mut k1w, &mut pe);
            for i in 0..k {
                td[i] = delta[i] + 0.5 * h * k1d[i];
                tw[i] = omega[i] + 0.5 * h * k1w[i];
            }
            deriv(y, &td, &tw, &mut k2d, &mut k2w, &mut pe);
            for i in 0..k {
                td[i] = delta[i] + 0.5 * h * k2d[i];
                tw[i] = omega[i] + 0.5 * h * k2w[i];
            }
            deriv(y, &td, &tw, &mut k3d, &mut k3w, &mut pe);
            for i in 0..k {
                td[i] = delta[i] + h * k3d[i];
                tw[i] = omega[i] + h * k3w[i];
            }
            deriv(y, &td, &tw, &mut k4d, &mut k4w, &mut pe);
            for i in 0..k {
                delta[i] += h / 6.0 * (k1d[i] + 2.0 * k2d[i] + 2.0 * k3d[i] + k4d[i]);
                omega[i] += h / 6.0 * (k1w[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i]);
            }
            let t = t0 + (s + 1) as f64 * h;
            if delta.iter().chain(&omega).any(|x| !x.is_finite()) {
                failure = Some(t);
                break 'outer;
            }
            max_spread = max_spread.max(spread(&delta));
            if t + 1e-9 >= next_sample {
                trajectory.push(TransientSample {
                    t_s: t,
                    angles_rad: delta.clone(),
                    speeds_pu: omega.clone(),
                });
                next_sample += params.sample_s;
            }
        }
    }
    let final_spread = if failure.is_some() { f64::INFINITY } else { spread(&delta) };
    if failure.is_none() && trajectory.last().is_some_and(|s| (s.t_s - horizon_s).abs() > 1e-9) {
        trajectory.push(TransientSample {
            t_s: horizon_s,
            angles_rad: delta.clone(),
            speeds_pu: omega.clone(),
        });
    }
    Ok(TransientResult {
        completed: failure.is_none(),
        horizon_s,
        generators: mach.ids,
        initial_angle_spread_rad: initial,
        final_angle_spread_rad: final_spread,
        max_angle_spread_rad: max_spread,
        failure_time_s: failure,
        trajectory,
    })
}
