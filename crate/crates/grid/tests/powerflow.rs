mod common;

use std::time::Instant;

use cia_grid::{builtin_case, parse_matpower_case, solve_ac_powerflow, BusKind, PowerFlowOptions, BUILTIN_CASES};
use num_complex::Complex64;

use common::{dense_ybus, two_bus};

#[test]
fn builtin_cases_satisfy_power_balance() {
    for name in BUILTIN_CASES {
        let case = builtin_case(name).unwrap();
        let start = Instant::now();
        let sol = solve_ac_powerflow(&case, &PowerFlowOptions::default());
        let elapsed = start.elapsed();
        assert!(sol.converged, "{name}: {:?}", sol.diagnostic);
        assert!(elapsed.as_secs_f64() < 1.0, "{name} took {elapsed:?}");

        let y = dense_ybus(&case);
        let v: Vec<Complex64> = sol
            .bus_voltages
            .iter()
            .map(|b| Complex64::from_polar(b.vm, b.va_rad))
            .collect();
        let n = v.len();
        let mut worst = 0.0_f64;
        for i in 0..n {
            let bus = &case.buses[i];
            let current: Complex64 = (0..n).map(|j| y[i][j] * v[j]).sum();
            let s_calc = v[i] * current.conj() * case.base_mva;
            let gen_p: f64 = case
                .generators
                .iter()
                .filter(|g| g.in_service && g.bus == bus.id)
                .map(|g| g.p_mw)
                .sum();
            let gen_q: f64 = case
                .generators
                .iter()
                .filter(|g| g.in_service && g.bus == bus.id)
                .map(|g| g.q_mvar)
                .sum();
            let (load_p, load_q) = case
                .loads
                .iter()
                .filter(|l| l.bus == bus.id)
                .fold((0.0, 0.0), |acc, l| (acc.0 + l.p_mw, acc.1 + l.q_mvar));
            if bus.kind != BusKind::Slack {
                worst = worst.max((s_calc.re - (gen_p - load_p)).abs() / case.base_mva);
            }
            let switched = sol.pv_to_pq.contains(&bus.id);
            if bus.kind == BusKind::PQ {
                worst = worst.max((s_calc.im - (gen_q - load_q)).abs() / case.base_mva);
            } else if !switched {
                assert!((v[i].norm() - bus.v_setpoint).abs() < 1e-12, "{name} bus {}", bus.id);
            }
        }
        assert!(worst < 1e-6, "{name}: mismatch {worst:e}");
        assert!(sol.max_mismatch <= 1e-8);
    }
}

/// V2^4 + (2 Q x - V1^2) V2^2 + x^2 (P^2 + Q^2) = 0 for a lossless line, high-voltage root.
fn two_bus_closed_form(p: f64, q: f64, x: f64) -> (f64, f64) {
    let b = 1.0 - 2.0 * q * x;
    let v2 = ((b + (b * b - 4.0 * x * x * (p * p + q * q)).sqrt()) / 2.0).sqrt();
    let theta = -(p * x / v2).asin();
    (v2, theta)
}

#[test]
fn two_bus_matches_closed_form() {
    for (p, q) in [(100.0, 0.0), (100.0, 30.0), (250.0, -20.0), (10.0, 5.0)] {
        let case = parse_matpower_case(&two_bus(p, q, 0.1)).unwrap();
        let sol = solve_ac_powerflow(&case, &PowerFlowOptions::default());
        assert!(sol.converged);
        let (v2, th) = two_bus_closed_form(p / 100.0, q / 100.0, 0.1);
        let b2 = &sol.bus_voltages[1];
        assert!((b2.vm - v2).abs() <= 1e-8, "{p},{q}: {} vs {v2}", b2.vm);
        assert!((b2.va_rad - th).abs() <= 1e-8, "{p},{q}: {} vs {th}", b2.va_rad);
        // lossless line: sending-end P equals the load
        assert!((sol.branch_flows[0].p_from_mw - p).abs() < 1e-5);
    }
}

#[test]
fn loading_percent_follows_rating() {
    let text = two_bus(80.0, 0.0, 0.1).replace("1 2 0 0.1 0 0 0 0", "1 2 0 0.1 0 50 60 0");
    let case = parse_matpower_case(&text).unwrap();
    let sol = solve_ac_powerflow(&case, &PowerFlowOptions::default());
    let f = &sol.branch_flows[0];
    let s = f.s_max_mva();
    assert!((f.loading_pct.unwrap() - s / 50.0 * 100.0).abs() < 1e-12);
    assert!((f.loading_against(true).unwrap() - s / 60.0 * 100.0).abs() < 1e-12);
}

#[test]
fn warm_start_reaches_same_point() {
    let case = builtin_case("ieee57").unwrap();
    let cold = solve_ac_powerflow(&case, &PowerFlowOptions::default());
    let warm = cia_grid::powerflow::solve_ac_powerflow_from(&case, &PowerFlowOptions::default(), &cold.complex_voltages());
    assert!(warm.converged);
    assert!(warm.iterations <= 1);
    for (a, b) in cold.bus_voltages.iter().zip(&warm.bus_voltages) {
        assert!((a.vm - b.vm).abs() < 1e-7 && (a.va_rad - b.va_rad).abs() < 1e-7);
    }
}
