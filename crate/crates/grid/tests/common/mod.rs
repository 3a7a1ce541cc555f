#![allow(dead_code)]

use cia_grid::GridCase;
use num_complex::Complex64;

/// Dense admittance matrix accumulated branch by branch, written without
/// reference to the library's construction.
pub fn dense_ybus(case: &GridCase) -> Vec<Vec<Complex64>> {
    let n = case.buses.len();
    let pos = |id| case.buses.iter().position(|b| b.id == id).unwrap();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for br in case.branches.iter().filter(|b| b.in_service) {
        let (f, t) = (pos(br.from_bus), pos(br.to_bus));
        let z = Complex64::new(br.r, br.x);
        let ys = z.inv();
        let half_b = Complex64::new(0.0, br.b_charging / 2.0);
        let a = Complex64::from_polar(br.tap, br.shift_deg * std::f64::consts::PI / 180.0);
        y[f][f] += (ys + half_b) / (a * a.conj());
        y[t][t] += ys + half_b;
        y[f][t] -= ys / a.conj();
        y[t][f] -= ys / a;
    }
    for s in &case.shunts {
        let i = pos(s.bus);
        y[i][i] += Complex64::new(s.g_mw, s.q_mvar) / case.base_mva;
    }
    y
}

pub fn two_bus(p_mw: f64, q_mvar: f64, x: f64) -> String {
    format!(
        "function mpc = twobus
mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
2 1 {p_mw} {q_mvar} 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [1 0 0 999 -999 1 100 1 999 0];
mpc.branch = [1 2 0 {x} 0 0 0 0 0 0 1];"
    )
}
