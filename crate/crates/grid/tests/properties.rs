use cia_grid::{
    apply_outage, builtin_case, default_limits, inspect, n1_elements, parse_matpower_case, restore,
    solve_ac_powerflow, to_matpower, ConnectionRequest, ConnectionType, LimitSet, PowerFlowOptions, Regime,
    ToleranceBands, Violation,
};
use proptest::prelude::*;

fn small_case(loads: &[(f64, f64)], xs: &[f64]) -> String {
    let mut bus = String::from("1 3 0 0 0 0 1 1.02 0 138 1 1.1 0.9;\n");
    for (k, (p, q)) in loads.iter().enumerate() {
        bus.push_str(&format!("{} 1 {p} {q} 0 0 1 1 0 138 1 1.1 0.9;\n", k + 2));
    }
    let n = loads.len() + 1;
    let mut branch = String::new();
    for (k, x) in xs.iter().enumerate() {
        let f = k % n + 1;
        let t = (k + 1) % n + 1;
        branch.push_str(&format!("{f} {t} 0.01 {x} 0.02 120 150 0 1 0 1;\n"));
    }
    format!(
        "mpc.baseMVA = 100;\nmpc.bus = [\n{bus}];\nmpc.gen = [1 0 0 500 -500 1.02 100 1 500 0];\nmpc.branch = [\n{branch}];"
    )
}

fn arb_case() -> impl Strategy<Value = String> {
    (2usize..6).prop_flat_map(|n| {
        (
            proptest::collection::vec((0.0..60.0f64, -10.0..20.0f64), n),
            proptest::collection::vec(0.05..0.3f64, n + 1),
        )
            .prop_map(|(loads, xs)| small_case(&loads, &xs))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn serialize_parse_round_trip(text in arb_case()) {
        let case = parse_matpower_case(&text).unwrap();
        let again = parse_matpower_case(&to_matpower(&case)).unwrap();
        prop_assert_eq!(case, again);
    }

    #[test]
    fn mutation_leaves_input_untouched(text in arb_case(), mw in 0.0..200.0f64, t in 0usize..6, q in -50.0..50.0f64) {
        let case = parse_matpower_case(&text).unwrap();
        let before = case.clone();
        let ctype = ConnectionType::ALL[t];
        let _ = case.apply_connection(&ConnectionRequest::new(2, mw, ctype)).unwrap();
        let _ = case.apply_shunt_mitigation(cia_grid::BusId(2), q).unwrap();
        prop_assert_eq!(case, before);
    }

    #[test]
    fn outage_restore_is_identity(text in arb_case(), pick in 0usize..64) {
        let case = parse_matpower_case(&text).unwrap();
        let elements = n1_elements(&case);
        let e = elements[pick % elements.len()];
        prop_assert_eq!(restore(&apply_outage(&case, e).unwrap(), e).unwrap(), case);
    }

    #[test]
    fn converged_solutions_balance(text in arb_case()) {
        let case = parse_matpower_case(&text).unwrap();
        let sol = solve_ac_powerflow(&case, &PowerFlowOptions::default());
        if sol.converged {
            prop_assert!(sol.max_mismatch <= 1e-8);
            let again = solve_ac_powerflow(&case, &PowerFlowOptions::default());
            prop_assert_eq!(sol, again);
        }
    }

    #[test]
    fn relaxing_limits_never_adds_violations(
        text in arb_case(),
        dv_lo in 0.0..0.1f64,
        dv_hi in 0.0..0.1f64,
        dl in 0.0..50.0f64,
        tight in 0.0..0.04f64,
    ) {
        let case = parse_matpower_case(&text).unwrap();
        let sol = solve_ac_powerflow(&case, &PowerFlowOptions::default());
        prop_assume!(sol.converged);
        let strict = LimitSet { v_min: 0.95 + tight, v_max: 1.05 - tight, loading_max: 40.0, angle_diff_max: None, regime: Regime::Normal };
        let relaxed = LimitSet { v_min: strict.v_min - dv_lo, v_max: strict.v_max + dv_hi, loading_max: strict.loading_max + dl, ..strict };
        let bands = ToleranceBands::default();
        let key = |v: &Violation| (v.element_kind, v.element_id, v.vtype);
        let a: Vec<_> = inspect(&sol, &strict, &bands).unwrap().violations.iter().map(key).collect();
        let b: Vec<_> = inspect(&sol, &relaxed, &bands).unwrap().violations.iter().map(key).collect();
        for k in &b {
            prop_assert!(a.contains(k));
        }
    }
}

#[test]
fn inspector_checks_every_element() {
    for name in ["ieee14", "ieee118"] {
        let case = builtin_case(name).unwrap();
        let sol = solve_ac_powerflow(&case, &PowerFlowOptions::default());
        let r = inspect(&sol, &default_limits(Regime::Emergency), &ToleranceBands::default()).unwrap();
        let in_service = case.branches.iter().filter(|b| b.in_service).count();
        assert_eq!(r.checked_elements, case.buses.len() + in_service);
        assert_eq!(r.hard_count + r.borderline_count, r.violations.len());
    }
}
