use glocal::error::{Error, UioFailure};
use glocal::harness::{builtin_scenario, Scenario};
use glocal::numerics::{spectral_abscissa, Matrix, Vector};
use glocal::observers::*;
use glocal::plant::simulate;
use glocal::adversary::AttackDriver;
use glocal::topology::SwitchingSignal;
use proptest::prelude::*;

mod common;
use common::decoupled_error;

fn sec5() -> Scenario {
    builtin_scenario("sec5-19node").unwrap()
}

#[test]
fn central_gain_meets_the_margin_in_every_mode() {
    let s = sec5();
    let g = design_central_gain(&s.plant, DEFAULT_ETA).unwrap();
    assert_eq!(g.abscissa_per_mode.len(), s.plant.lib.len());
    for &a in &g.abscissa_per_mode {
        assert!(a <= -DEFAULT_ETA, "{a}");
    }
    let again = validate_central_gain(&s.plant, &g.h, DEFAULT_ETA).unwrap();
    assert_eq!(again, g.abscissa_per_mode);
    // the consensus direction stays unobservable, so it is excluded from the margin
    let cl = s.plant.a(0).unwrap() - &g.h * s.plant.c();
    assert!(spectral_abscissa(&cl).abs() < 1e-8);
}

#[test]
fn uio_algebra_holds_for_every_monitor() {
    let s = sec5();
    let p = &s.plant;
    for m in &s.monitors {
        let u = design_uio(&s.partitioned, m.cluster, &m.measured, p.alpha, p.gamma, DEFAULT_ETA).unwrap();
        assert!(u.algebra_error(&s.partitioned, p.alpha, p.gamma) < 1e-9);
        for &a in &u.abscissa_per_mode {
            assert!(a <= -DEFAULT_ETA);
        }
        assert!(u.dwell_time.is_finite() && u.dwell_time > 0.0);
        let ce = &u.c * &u.e;
        assert!(((&u.h * &ce) - &u.e).amax() < 1e-9);
    }
}

#[test]
fn uio_rank_failure_when_coupling_is_not_measured() {
    let s = sec5();
    let p = &s.plant;
    // P3 receives coupling at nodes 13 and 15; measuring only 17 loses it.
    let err = design_uio(&s.partitioned, 2, &[16], p.alpha, p.gamma, DEFAULT_ETA).unwrap_err();
    assert!(matches!(err, Error::UioInfeasible { kind: UioFailure::Rank, .. }), "{err}");
}

#[test]
fn uio_detectability_failure_for_an_unreachable_margin() {
    let s = sec5();
    let p = &s.plant;
    let err = design_uio(&s.partitioned, 0, &[0, 4], p.alpha, p.gamma, 50.0).unwrap_err();
    assert!(matches!(err, Error::UioInfeasible { kind: UioFailure::Detectability, .. }), "{err}");
}

#[test]
fn dwell_time_is_zero_for_a_single_mode() {
    let f = Matrix::identity(2, 2) * -3.0;
    assert_eq!(dwell_time(&[f.clone()], 0.5).unwrap(), 0.0);
    // identical modes need no dwell
    assert!(dwell_time(&[f.clone(), f], 0.5).unwrap().abs() < 1e-12);
}

#[test]
fn threshold_calibration_formula() {
    let t = [0.0, 4.0, 6.0, 8.0];
    let r = [9.0, 9.0, 0.25, 0.5];
    assert_eq!(calibrate_threshold(&t, &r, 5.0), 2.0 * 0.5 + THRESHOLD_FLOOR);
    assert_eq!(calibrate_threshold(&t, &[0.0; 4], 5.0), THRESHOLD_FLOOR);
}

#[test]
fn trace_driven_runs_decay_without_attack() {
    let s = sec5();
    let p = &s.plant;
    let x0 = Vector::from_fn(38, |i, _| if i < 19 { (i as f64).cos() } else { 0.0 });
    let tr = simulate(p, &SwitchingSignal::constant(0), &AttackDriver::none(p), &x0, 20.0, 1e-2).unwrap();
    let g = design_central_gain(p, DEFAULT_ETA).unwrap();
    let rt = central_observer_run(p, &g.h, &tr, &Vector::zeros(38)).unwrap();
    let norms = rt.r0_norms();
    let peak = norms.iter().cloned().fold(0.0, f64::max);
    assert!(peak > 0.01, "{peak}");
    assert!(*norms.last().unwrap() < 1e-3 * peak);
    let m = &s.monitors[0];
    let u = design_uio(&s.partitioned, m.cluster, &m.measured, p.alpha, p.gamma, DEFAULT_ETA).unwrap();
    let r = uio_run(&u, &tr, &Vector::zeros(u.state_dim())).unwrap();
    assert!(r[0].amax() > 0.0 || r[1].amax() > 0.0);
    assert!(r.last().unwrap().amax() < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn uio_error_ignores_neighbouring_clusters(freqs in proptest::collection::vec(0.1f64..4.0, 3), j in 0usize..4, switch_at in proptest::option::of(7.0f64..15.0)) {
        let s = sec5();
        let (e0, e1) = decoupled_error(&s, j, &freqs, switch_at, 20.0 / DEFAULT_ETA);
        prop_assert!(e0 > 0.1);
        prop_assert!(e1 < 1e-6 * e0, "e0 {} e1 {}", e0, e1);
    }
}
