//! Closed-loop double-integrator consensus under switching topology.

use crate::adversary::AttackDriver;
use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, Matrix, Vector};
use crate::topology::{SwitchingSignal, TopologyLibrary};

/// States whose infinity norm exceeds this value stop the integration.
pub const OVERFLOW_GUARD: f64 = 1e12;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct PlantModel {
    pub alpha: f64,
    pub gamma: f64,
    pub lib: TopologyLibrary,
    /// `F̄`, ascending.
    pub attacked_actuators: Vec<usize>,
    /// `M_x`, ascending.
    pub monitored_positions: Vec<usize>,
    /// `M_v`, ascending.
    pub monitored_velocities: Vec<usize>,
}

fn sorted_set(name: &str, mut v: Vec<usize>, n: usize) -> Result<Vec<usize>> {
    v.sort_unstable();
    v.dedup();
    if let Some(&bad) = v.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!("{name} names node {} outside 1..={n}", bad + 1)));
    }
    Ok(v)
}

/// `k x n` matrix selecting the listed coordinates.
pub fn selection(rows: &[usize], n: usize) -> Matrix {
    let mut m = Matrix::zeros(rows.len(), n);
    for (r, &i) in rows.iter().enumerate() {
        m[(r, i)] = 1.0;
    }
    m
}

/// `[0, I; -alpha L, -gamma I]`.
pub fn consensus_matrix(l: &Matrix, alpha: f64, gamma: f64) -> Matrix {
    let n = l.nrows();
    let mut a = Matrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).fill_with_identity();
    a.view_mut((n, 0), (n, n)).copy_from(&(l * -alpha));
    a.view_mut((n, n), (n, n)).fill_with_identity();
    a.view_mut((n, n), (n, n)).scale_mut(-gamma);
    a
}

impl PlantModel {
    pub fn new(
        alpha: f64,
        gamma: f64,
        lib: TopologyLibrary,
        attacked_actuators: Vec<usize>,
        monitored_positions: Vec<usize>,
        monitored_velocities: Vec<usize>,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gains must be positive, got alpha={alpha}, gamma={gamma}")));
        }
        let n = lib.n();
        Ok(PlantModel {
            alpha,
            gamma,
            attacked_actuators: sorted_set("attacked actuators", attacked_actuators, n)?,
            monitored_positions: sorted_set("monitored positions", monitored_positions, n)?,
            monitored_velocities: sorted_set("monitored velocities", monitored_velocities, n)?,
            lib,
        })
    }

    pub fn n(&self) -> usize {
        self.lib.n()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n()
    }

    pub fn output_dim(&self) -> usize {
        self.monitored_positions.len() + self.monitored_velocities.len()
    }

    /// `A_q`.
    pub fn a(&self, q: usize) -> Result<Matrix> {
        Ok(consensus_matrix(self.lib.laplacian(q)?, self.alpha, self.gamma))
    }

    /// `B = [0; I_F̄]`.
    pub fn b(&self) -> Matrix {
        let n = self.n();
        let mut b = Matrix::zeros(2 * n, self.attacked_actuators.len());
        for (k, &i) in self.attacked_actuators.iter().enumerate() {
            b[(n + i, k)] = 1.0;
        }
        b
    }

    /// `C_x` as an `|M_x| x N` selection.
    pub fn c_x(&self) -> Matrix {
        selection(&self.monitored_positions, self.n())
    }

    /// `C_v` as an `|M_v| x N` selection.
    pub fn c_v(&self) -> Matrix {
        selection(&self.monitored_velocities, self.n())
    }

    /// `C = diag(C_x, C_v)`.
    pub fn c(&self) -> Matrix {
        let n = self.n();
        let px = self.monitored_positions.len();
        let mut c = Matrix::zeros(self.output_dim(), 2 * n);
        c.view_mut((0, 0), (px, n)).copy_from(&self.c_x());
        c.view_mut((px, n), (self.monitored_velocities.len(), n))
            .copy_from(&self.c_v());
        c
    }

    /// 1-based labels for the output rows.
    pub fn output_labels(&self) -> Vec<String> {
        self.monitored_positions
            .iter()
            .map(|i| format!("x{}", i + 1))
            .chain(self.monitored_velocities.iter().map(|i| format!("v{}", i + 1)))
            .collect()
    }

    /// Copy with a different attacked set.
    pub fn with_actuators(&self, actuators: Vec<usize>) -> Result<Self> {
        PlantModel::new(
            self.alpha,
            self.gamma,
            self.lib.clone(),
            actuators,
            self.monitored_positions.clone(),
            self.monitored_velocities.clone(),
        )
    }
}

/// Same as [`PlantModel::a`].
pub fn assemble_mode_matrix(p: &PlantModel, q: usize) -> Result<Matrix> {
    p.a(q)
}

/// One classical Runge-Kutta step of `x' = f(t, x)`.
pub fn rk4_step<F: Fn(f64, &Vector) -> Vector>(f: F, t: f64, x: &Vector, dt: f64) -> Vector {
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * dt, &(x + &k1 * (0.5 * dt)));
    let k3 = f(t + 0.5 * dt, &(x + &k2 * (0.5 * dt)));
    let k4 = f(t + dt, &(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Grid of `steps + 1` points `k * dt`; `t_end` is rounded to the grid.
pub fn time_grid(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::invalid(format!("horizon must be non-negative, got {t_end}")));
    }
    let steps = (t_end / dt).round() as usize;
    Ok((0..=steps).map(|k| k as f64 * dt).collect())
}

#[derive(Debug, Clone, Default)]
pub struct SimTrace {
    pub times: Vec<f64>,
    /// `col(x, v)` at each time.
    pub states: Vec<Vector>,
    pub inputs_ua: Vec<Vector>,
    pub inputs_us: Vec<Vector>,
    /// `y = C x - u_s`.
    pub outputs: Vec<Vector>,
    /// Mode active on `[times[k], times[k + 1])`.
    pub modes: Vec<usize>,
    pub diverged: bool,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the grid point nearest to `t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        if self.times.is_empty() {
            return None;
        }
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return Some(0);
        }
        if k >= self.times.len() {
            return Some(self.times.len() - 1);
        }
        Some(if t - self.times[k - 1] <= self.times[k] - t { k - 1 } else { k })
    }

    /// Grid step (0 for traces with fewer than two points).
    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }
}

/// Integrates the plant under `sig` with `attack` injected.
pub fn simulate(
    p: &PlantModel,
    sig: &SwitchingSignal,
    attack: &AttackDriver,
    x0: &Vector,
    t_end: f64,
    dt: f64,
) -> Result<SimTrace> {
    let n2 = p.state_dim();
    if x0.len() != n2 {
        return Err(Error::dims(format!("x0 has length {}, expected {n2}", x0.len())));
    }
    ensure_finite(&Matrix::from_column_slice(n2, 1, x0.as_slice()), "x0")?;
    attack.check_dims(p)?;
    let sig = sig.snapped(dt)?;
    let grid = time_grid(t_end, dt)?;
    let mats: Vec<Matrix> = (0..p.lib.len()).map(|q| p.a(q)).collect::<Result<_>>()?;
    for &q in sig.modes() {
        p.lib.mode(q)?;
    }
    let b = p.b();
    let c = p.c();
    let rd = attack.replica_dim();

    let mut tr = SimTrace::default();
    let mut s = Vector::zeros(n2 + rd);
    s.rows_mut(0, n2).copy_from(x0);
    let record = |tr: &mut SimTrace, t: f64, s: &Vector| {
        let x = s.rows(0, n2).into_owned();
        let rep = s.rows(n2, rd).into_owned();
        let us = attack.us(t, &rep);
        tr.outputs.push(&c * &x - &us);
        tr.inputs_ua.push(attack.ua(t));
        tr.inputs_us.push(us);
        tr.states.push(x);
        tr.times.push(t);
    };
    record(&mut tr, grid[0], &s);
    for k in 0..grid.len() - 1 {
        let t = grid[k];
        let q = sig.mode_at(t + 0.5 * dt);
        tr.modes.push(q);
        let a = &mats[q];
        let rhs = |tt: f64, st: &Vector| {
            let x = st.rows(0, n2);
            let ua = attack.ua(tt);
            let mut d = Vector::zeros(n2 + rd);
            d.rows_mut(0, n2).copy_from(&(a * x + &b * &ua));
            if rd > 0 {
                d.rows_mut(n2, rd)
                    .copy_from(&attack.replica_deriv(tt, &st.rows(n2, rd).into_owned()));
            }
            d
        };
        s = rk4_step(rhs, t, &s, dt);
        record(&mut tr, grid[k + 1], &s);
        if !s.iter().all(|v| v.is_finite()) || s.rows(0, n2).amax() > OVERFLOW_GUARD {
            tr.diverged = true;
            break;
        }
    }
    if let Some(&last) = tr.modes.last() {
        tr.modes.push(last);
    } else {
        tr.modes.push(sig.mode_at(0.0));
    }
    Ok(tr)
}

/// `max_ij |x_i - x_j| + max_i |v_i|` of a single state.
pub fn consensus_error_of(state: &Vector) -> f64 {
    let n = state.len() / 2;
    if n == 0 {
        return 0.0;
    }
    let x = state.rows(0, n);
    let v = state.rows(n, n);
    (x.max() - x.min()) + v.amax()
}

/// Consensus error at the grid point nearest to `t`.
pub fn consensus_error(tr: &SimTrace, t: f64) -> Result<f64> {
    let k = tr
        .index_at(t)
        .ok_or_else(|| Error::invalid("empty trace"))?;
    Ok(consensus_error_of(&tr.states[k]))
}
