use cia_grid::transient::run_transient_with;
use cia_grid::{builtin_case, parse_matpower_case, run_transient, BusId, FaultSpec, TransientParams};

#[test]
fn default_fault_on_ieee14_is_stable_and_dt_invariant() {
    let case = builtin_case("ieee14").unwrap();
    for bus in [4, 9, 14] {
        let fault = FaultSpec::default_at(BusId(bus));
        let full = run_transient(&case, &fault, 10.0, 0.005).unwrap();
        let half = run_transient(&case, &fault, 10.0, 0.0025).unwrap();
        assert!(full.completed && half.completed);
        assert!(full.stable(), "bus {bus}: spread {}", full.final_angle_spread_rad);
        assert_eq!(full.stable(), half.stable());
        assert!((full.final_angle_spread_rad - half.final_angle_spread_rad).abs() < 1e-3);
    }
}

// A heavily loaded remote machine against a second machine that carries the load.
const MACHINE_VS_SYSTEM: &str = "mpc.baseMVA = 100;
mpc.bus = [
1 3 150 20 0 0 1 1 0 230 1 1.1 0.9;
2 2 0 0 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
1 50 0 300 -300 1 500 1 500 0;
2 100 0 300 -300 1 100 1 200 0;
];
mpc.branch = [1 2 0 0.2 0 0 0 0 0 0 1];";

#[test]
fn sustained_fault_loses_synchronism() {
    let case = parse_matpower_case(MACHINE_VS_SYSTEM).unwrap();
    let horizon = 5.0;
    let fault = FaultSpec {
        bus: BusId(2),
        t_on_s: 0.0,
        t_off_s: horizon,
        kind: Default::default(),
    };
    let r = run_transient(&case, &fault, horizon, 0.005).unwrap();
    assert!(r.completed);
    assert!(r.final_angle_spread_rad > std::f64::consts::TAU, "{}", r.final_angle_spread_rad);
    assert!(!r.stable());

    // energy argument: with the terminal shorted the machine sees no
    // electrical output, so its speed rises monotonically while the fault lasts
    let idx = r.generators.iter().position(|g| g.0 == 2).unwrap();
    let speeds: Vec<f64> = r.trajectory.iter().map(|s| s.speeds_pu[idx]).collect();
    assert!(speeds.windows(2).all(|w| w[1] >= w[0] - 1e-12));

    // a long, finely stepped rerun agrees
    let fine = run_transient_with(
        &case,
        &fault,
        horizon,
        &TransientParams {
            dt_s: 0.001,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(!fine.stable());
}

#[test]
fn cleared_fault_on_same_case_recovers() {
    let case = parse_matpower_case(MACHINE_VS_SYSTEM).unwrap();
    let r = run_transient(&case, &FaultSpec::default_at(BusId(2)), 10.0, 0.005).unwrap();
    assert!(r.stable(), "{}", r.final_angle_spread_rad);
}
