#![allow(dead_code)]

use glocal::harness::Scenario;
use glocal::numerics::{Matrix, Vector};
use glocal::observers::{design_uio, DEFAULT_ETA};
use glocal::plant::rk4_step;

/// Runs `x' = A_q x + B_ext w(t)` with inputs only outside cluster `i` jointly with
/// the cluster's UIO, and returns `(|e(0)|, |e(t_end)|)`.
pub fn decoupled_error(s: &Scenario, j: usize, freqs: &[f64], mode_switch: Option<f64>, t_end: f64) -> (f64, f64) {
    let p = &s.plant;
    let m = &s.monitors[j];
    let u = design_uio(&s.partitioned, m.cluster, &m.measured, p.alpha, p.gamma, DEFAULT_ETA).unwrap();
    let outside: Vec<usize> = (0..p.n()).filter(|v| s.clusters.cluster_of(*v) != Some(m.cluster)).collect();
    let mats: Vec<Matrix> = (0..p.lib.len()).map(|q| p.a(q).unwrap()).collect();
    let n2 = p.state_dim();
    let k = u.state_dim();
    let gains: Vec<Matrix> = (0..p.lib.len()).map(|q| &u.k_per_mode[q] + &u.kbar_per_mode[q]).collect();
    let mut st = Vector::zeros(n2 + k);
    for i in 0..p.n() {
        st[i] = ((i + 1) as f64 * 0.77).sin();
    }
    let x0 = st.rows(0, n2).into_owned();
    let z0 = u.initial_state(&Vector::zeros(k), &u.local_output(&x0));
    st.rows_mut(n2, k).copy_from(&z0);
    let err = |st: &Vector| {
        let x = st.rows(0, n2).into_owned();
        let z = st.rows(n2, k).into_owned();
        (u.local_state(&x) - u.estimate(&z, &u.local_output(&x))).amax()
    };
    let e0 = err(&st);
    let dt = 1e-2;
    let steps = (t_end / dt).round() as usize;
    for step in 0..steps {
        let t = step as f64 * dt;
        let q = match mode_switch {
            Some(ts) if t >= ts => p.lib.len() - 1,
            _ => 0,
        };
        let rhs = |tt: f64, v: &Vector| {
            let x = v.rows(0, n2).into_owned();
            let mut dx = &mats[q] * &x;
            for (a, &node) in outside.iter().enumerate() {
                let f = freqs[a % freqs.len()];
                dx[p.n() + node] += 3.0 * (f * tt).sin() + (0.3 * f * tt).cos();
            }
            let z = v.rows(n2, k).into_owned();
            let dz = &u.f_per_mode[q] * &z + &gains[q] * u.local_output(&x);
            let mut d = Vector::zeros(n2 + k);
            d.rows_mut(0, n2).copy_from(&dx);
            d.rows_mut(n2, k).copy_from(&dz);
            d
        };
        st = rk4_step(rhs, t, &st, dt);
    }
    (e0, err(&st))
}
