use glocal::adversary::{AttackDriver, CovertAttacker};
use glocal::numerics::{Matrix, Vector};
use glocal::plant::*;
use glocal::topology::{SwitchingSignal, TopologyLibrary, WeightedGraph};
use proptest::prelude::*;

fn ring(n: usize) -> WeightedGraph {
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0 + 0.1 * i as f64)).collect();
    WeightedGraph::from_edges(n, &edges).unwrap()
}

fn plant(n: usize, actuators: Vec<usize>) -> PlantModel {
    let g = ring(n);
    let lib = TopologyLibrary::new(vec![g.clone(), g.toggled(0, 2, 1.0).unwrap()]).unwrap();
    PlantModel::new(1.0, 2.0, lib, actuators, vec![], vec![1, 3]).unwrap()
}

#[test]
fn mode_matrix_blocks() {
    let p = plant(4, vec![]);
    let a = p.a(0).unwrap();
    let l = p.lib.laplacian(0).unwrap();
    assert_eq!(a.view((0, 0), (4, 4)).amax(), 0.0);
    assert_eq!(a.view((0, 4), (4, 4)).into_owned(), Matrix::identity(4, 4));
    assert_eq!(a.view((4, 0), (4, 4)).into_owned(), -l);
    assert_eq!(a.view((4, 4), (4, 4)).into_owned(), Matrix::identity(4, 4) * -2.0);
}

#[test]
fn input_and_output_maps() {
    let p = plant(5, vec![3, 1, 3]);
    assert_eq!(p.attacked_actuators, vec![1, 3]);
    let b = p.b();
    assert_eq!(b.shape(), (10, 2));
    assert_eq!(b[(6, 0)], 1.0);
    assert_eq!(b[(8, 1)], 1.0);
    let c = p.c();
    assert_eq!(c.shape(), (2, 10));
    assert_eq!(c[(0, 6)], 1.0);
    assert_eq!(c[(1, 8)], 1.0);
    assert_eq!(p.output_labels(), vec!["v2", "v4"]);
}

#[test]
fn rejects_bad_gains_and_nodes() {
    let lib = TopologyLibrary::new(vec![ring(3)]).unwrap();
    assert!(PlantModel::new(0.0, 2.0, lib.clone(), vec![], vec![], vec![]).is_err());
    assert!(PlantModel::new(1.0, -1.0, lib.clone(), vec![], vec![], vec![]).is_err());
    assert!(PlantModel::new(1.0, 2.0, lib, vec![3], vec![], vec![]).is_err());
}

#[test]
fn time_grid_rounds_to_steps() {
    let g = time_grid(1.0, 0.25).unwrap();
    assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    assert_eq!(time_grid(0.0, 0.1).unwrap(), vec![0.0]);
    assert!(time_grid(1.0, 0.0).is_err());
    assert!(time_grid(-1.0, 0.1).is_err());
}

/// Halving the step of a fourth-order method divides the global error by about 16.
#[test]
fn rk4_is_fourth_order() {
    let f = |_t: f64, x: &Vector| Vector::from_vec(vec![x[1], -x[0]]);
    let err = |dt: f64| {
        let steps = (2.0 / dt).round() as usize;
        let mut x = Vector::from_vec(vec![1.0, 0.0]);
        for k in 0..steps {
            x = rk4_step(f, k as f64 * dt, &x, dt);
        }
        ((x[0] - 2.0f64.cos()).powi(2) + (x[1] + 2.0f64.sin()).powi(2)).sqrt()
    };
    let ratio = err(0.1) / err(0.05);
    assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
}

#[test]
fn simulate_records_modes_and_outputs() {
    let p = plant(4, vec![]);
    let sig = SwitchingSignal::new(vec![0.0, 0.5], vec![0, 1]).unwrap();
    let x0 = Vector::from_vec(vec![1.0, -1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let tr = simulate(&p, &sig, &AttackDriver::none(&p), &x0, 1.0, 0.01).unwrap();
    assert_eq!(tr.len(), 101);
    assert_eq!(tr.modes.len(), 101);
    assert_eq!(tr.modes[49], 0);
    assert_eq!(tr.modes[50], 1);
    assert!(!tr.diverged);
    let c = p.c();
    for k in 0..tr.len() {
        assert!((&tr.outputs[k] - &c * &tr.states[k]).amax() < 1e-15);
    }
    assert_eq!(tr.index_at(0.504), Some(50));
}

#[test]
fn simulate_rejects_bad_initial_state() {
    let p = plant(4, vec![]);
    let sig = SwitchingSignal::constant(0);
    assert!(simulate(&p, &sig, &AttackDriver::none(&p), &Vector::zeros(7), 1.0, 0.01).is_err());
    let bad_mode = SwitchingSignal::constant(5);
    assert!(simulate(&p, &bad_mode, &AttackDriver::none(&p), &Vector::zeros(8), 1.0, 0.01).is_err());
}

#[test]
fn overflow_guard_stops_integration() {
    let p = plant(4, vec![0]);
    let attack = AttackDriver::Covert(CovertAttacker::new(&p, 1e14, 0.0).unwrap());
    let tr = simulate(&p, &SwitchingSignal::constant(0), &attack, &Vector::zeros(8), 10.0, 0.01).unwrap();
    assert!(tr.diverged);
    assert!(tr.len() < 1001);
    assert!(tr.states.last().unwrap().amax() > OVERFLOW_GUARD);
}

#[test]
fn consensus_error_of_agreement_is_zero() {
    let s = Vector::from_vec(vec![2.0, 2.0, 2.0, 0.0, 0.0, 0.0]);
    assert_eq!(consensus_error_of(&s), 0.0);
    let s = Vector::from_vec(vec![1.0, 2.0, 4.0, 0.0, -0.5, 0.0]);
    assert_eq!(consensus_error_of(&s), 3.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// `sum x + sum v / gamma` is conserved; with zero initial velocities the
    /// agents agree on the average initial position.
    #[test]
    fn average_is_invariant_and_reached(xs in proptest::collection::vec(-3.0f64..3.0, 5), switch_at in 0.5f64..3.0) {
        let p = plant(5, vec![]);
        let mut x0 = Vector::zeros(10);
        for i in 0..5 {
            x0[i] = xs[i];
        }
        let avg = xs.iter().sum::<f64>() / 5.0;
        let sig = SwitchingSignal::new(vec![0.0, switch_at], vec![0, 1]).unwrap();
        let tr = simulate(&p, &sig, &AttackDriver::none(&p), &x0, 30.0, 0.01).unwrap();
        for s in tr.states.iter().step_by(100) {
            let inv = s.rows(0, 5).sum() + s.rows(5, 5).sum() / p.gamma;
            prop_assert!((inv - 5.0 * avg).abs() < 1e-10);
        }
        let last = tr.states.last().unwrap();
        for i in 0..5 {
            prop_assert!((last[i] - avg).abs() < 1e-4);
            prop_assert!(last[5 + i].abs() < 1e-4);
        }
    }
}
