mod common;

use common::lattice::controlled_oracle;

const PROBES: [(f64, f64, f64); 5] =
    [(2.5, 0.0, 1.17284), (0.0, 0.0, 0.42671), (-1.2, 0.0, 1.01695), (0.6, 0.5, 0.29738), (1.5, 0.5, 0.76959)];

#[test]
fn frozen_lattice_values_reproduce() {
    let lat = controlled_oracle(4000, &[0.0, 0.5]);
    for (x, t, v) in PROBES {
        assert!((lat.value(x, t) - v).abs() < 5e-6, "({x}, {t}): {} vs {v}", lat.value(x, t));
    }
}

#[test]
fn lattice_is_converged_in_time() {
    let coarse = controlled_oracle(3000, &[0.0, 0.5]);
    let fine = controlled_oracle(4000, &[0.0, 0.5]);
    for (x, t, _) in PROBES {
        assert!((coarse.value(x, t) - fine.value(x, t)).abs() < 5e-3, "({x}, {t})");
    }
}

#[test]
fn far_states_act_and_centre_waits() {
    let lat = controlled_oracle(3000, &[0.0]);
    assert!(lat.action(2.5, 0.0));
    assert!(!lat.action(0.0, 0.0));
    // B ≥ 0.5 caps the gain of acting at any state
    assert!(lat.value(2.5, 0.0) <= lat.value(0.0, 0.0) + 0.5 + 0.1 * 2.5 + 1e-12);
}
