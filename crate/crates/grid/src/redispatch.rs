//! Reduced-fidelity redispatch: DC sensitivities pick a pair of generators
//! to shift between, and every shift is checked with a full AC solve.

use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::GridError;
use crate::inspector::{LimitSet, Regime};
use crate::model::{BranchId, BusId, GenId, GridCase};
use crate::powerflow::{solve_ac_powerflow, PowerFlowOptions, PowerFlowSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedispatchOptions {
    pub max_iter: usize,
    /// Shifts are sized to remove this multiple of the estimated overload.
    pub overshoot: f64,
    /// Pairs whose combined sensitivity is below this are ignored.
    pub min_sensitivity: f64,
    pub pf: PowerFlowOptions,
}

impl Default for RedispatchOptions {
    fn default() -> Self {
        Self {
            max_iter: 20,
            overshoot: 1.05,
            min_sensitivity: 0.02,
            pf: PowerFlowOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchChange {
    pub gen: GenId,
    pub bus: BusId,
    pub p_before_mw: f64,
    pub p_after_mw: f64,
    pub delta_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedispatchResult {
    pub converged: bool,
    pub iterations: usize,
    pub dispatch_changes: Vec<DispatchChange>,
    pub post_solution: PowerFlowSolution,
    /// Worst loading ratio (percent of the regime limit's rating) after each accepted step, base first.
    pub max_loading_history: Vec<f64>,
    pub residual_overloads: Vec<BranchId>,
    /// The case with the final dispatch applied.
    #[serde(skip)]
    pub post_case: Option<GridCase>,
}

/// Row of the DC power transfer distribution factors for one branch: MW on
/// the branch (from to to) per MW injected at each bus and withdrawn at the
/// slack. Indexed in bus order.
pub fn ptdf_row(case: &GridCase, branch: BranchId) -> Result<Vec<f64>, GridError> {
    let idx = case.bus_index();
    let n = case.buses.len();
    let slack = idx.get(case.slack_bus().id).expect("slack indexed");
    let br = case
        .branch(branch)
        .ok_or(GridError::UnknownElement(crate::model::Element::Branch(branch)))?;
    // reduced index: skip the slack
    let red = |i: usize| if i < slack { i } else { i - 1 };
    let m = n - 1;
    let mut b = Mat::<f64>::zeros(m, m);
    for e in case.branches.iter().filter(|e| e.in_service) {
        let (f, t) = (idx.get(e.from_bus).unwrap(), idx.get(e.to_bus).unwrap());
        let y = 1.0 / (e.x * e.tap);
        if f != slack {
            b[(red(f), red(f))] += y;
        }
        if t != slack {
            b[(red(t), red(t))] += y;
        }
        if f != slack && t != slack {
            b[(red(f), red(t))] -= y;
            b[(red(t), red(f))] -= y;
        }
    }
    // B is symmetric, so the row is B^-1 a with a = (e_f - e_t) / x_k
    let (f, t) = (idx.get(br.from_bus).unwrap(), idx.get(br.to_bus).unwrap());
    let xk = br.x * br.tap;
    let mut a = Mat::<f64>::zeros(m, 1);
    if f != slack {
        a[(red(f), 0)] += 1.0 / xk;
    }
    if t != slack {
        a[(red(t), 0)] -= 1.0 / xk;
    }
    let w = b.partial_piv_lu().solve(&a);
    let mut row = vec![0.0; n];
    for i in (0..n).filter(|&i| i != slack) {
        row[i] = w[(red(i), 0)];
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(GridError::Invalid("DC susceptance matrix is singular".into()));
    }
    Ok(row)
}

fn worst_loading(sol: &PowerFlowSolution, limits: &LimitSet) -> Option<(BranchId, f64, f64)> {
    let emergency = limits.regime == Regime::Emergency;
    sol.branch_flows
        .iter()
        .filter(|f| f.in_service)
        .filter_map(|f| f.loading_against(emergency).map(|l| (f.id, l, f.p_from_mw)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

fn overloaded(sol: &PowerFlowSolution, limits: &LimitSet) -> Vec<BranchId> {
    let emergency = limits.regime == Regime::Emergency;
    sol.branch_flows
        .iter()
        .filter(|f| f.in_service)
        .filter(|f| f.loading_against(emergency).is_some_and(|l| l > limits.loading_max))
        .map(|f| f.id)
        .collect()
}

/// Attempts to clear thermal overloads by shifting generation between pairs
/// of dispatchable, non-slack units. Topology, taps and shunts are never
/// touched and every unit stays within [p_min, p_max].
pub fn redispatch(case: &GridCase, limits: &LimitSet) -> Result<RedispatchResult, GridError> {
    redispatch_with(case, limits, &RedispatchOptions::default())
}

pub fn redispatch_with(case: &GridCase, limits: &LimitSet, opts: &RedispatchOptions) -> Result<RedispatchResult, GridError> {
    let base = solve_ac_powerflow(case, &opts.pf);
    if !base.converged {
        return Err(GridError::BaseDiverged(base.diagnostic.unwrap_or_default()));
    }
    let idx = case.bus_index();
    let slack = case.slack_bus().id;
    let mut cur = case.clone();
    let mut sol = base;
    let mut history = vec![worst_loading(&sol, limits).map_or(0.0, |w| w.1)];
    let mut iterations = 0;
    let emergency = limits.regime == Regime::Emergency;

    while iterations < opts.max_iter && !overloaded(&sol, limits).is_empty() {
        iterations += 1;
        let (worst, loading, p_from) = worst_loading(&sol, limits).expect("overload implies a rated branch");
        let br = cur.branch(worst).expect("branch exists");
        let rate = br.rate(emergency).expect("rated");
        let excess_mw = (loading - limits.loading_max) / 100.0 * rate;
        let ptdf = ptdf_row(&cur, worst)?;
        let dir = if p_from >= 0.0 { 1.0 } else { -1.0 };

        // down-unit u and up-unit d: moving dP from u to d changes the flow by
        // (ptdf_d - ptdf_u) dP, so want dir * (ptdf_u - ptdf_d) large.
        let movable: Vec<usize> = cur
            .generators
            .iter()
            .enumerate()
            .filter(|(_, g)| g.in_service && g.bus != slack && g.p_max > g.p_min)
            .map(|(k, _)| k)
            .collect();
        let mut best: Option<(usize, usize, f64)> = None;
        for &u in &movable {
            let gu = &cur.generators[u];
            if gu.p_mw - gu.p_min <= 1e-6 {
                continue;
            }
            for &d in &movable {
                let gd = &cur.generators[d];
                if d == u || gd.p_max - gd.p_mw <= 1e-6 {
                    continue;
                }
                let s = dir * (ptdf[idx.get(gu.bus).unwrap()] - ptdf[idx.get(gd.bus).unwrap()]);
                if s > opts.min_sensitivity && best.is_none_or(|b| s > b.2) {
                    best = Some((u, d, s));
                }
            }
        }
        let Some((u, d, s)) = best else { break };
        let room = (cur.generators[u].p_mw - cur.generators[u].p_min).min(cur.generators[d].p_max - cur.generators[d].p_mw);
        let mut shift = (excess_mw * opts.overshoot / s).min(room);
        let mut accepted = false;
        for _ in 0..4 {
            let mut trial = cur.clone();
            trial.generators[u].p_mw -= shift;
            trial.generators[d].p_mw += shift;
            let tsol = solve_ac_powerflow(&trial, &opts.pf);
            let w = worst_loading(&tsol, limits).map_or(0.0, |w| w.1);
            if tsol.converged && w < *history.last().unwrap() {
                cur = trial;
                sol = tsol;
                history.push(w);
                accepted = true;
                break;
            }
            shift /= 2.0;
        }
        if !accepted {
            break;
        }
    }

    let dispatch_changes = case
        .generators
        .iter()
        .zip(&cur.generators)
        .filter(|(a, b)| a.p_mw != b.p_mw)
        .map(|(a, b)| DispatchChange {
            gen: a.id,
            bus: a.bus,
            p_before_mw: a.p_mw,
            p_after_mw: b.p_mw,
            delta_mw: b.p_mw - a.p_mw,
        })
        .collect();
    Ok(RedispatchResult {
        converged: sol.converged,
        iterations,
        dispatch_changes,
        residual_overloads: overloaded(&sol, limits),
        post_solution: sol,
        max_loading_history: history,
        post_case: Some(cur),
    })
}
