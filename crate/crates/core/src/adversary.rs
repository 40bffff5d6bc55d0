//! Zero-dynamics and covert attack synthesis and injection.

use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::numerics::{invariant_zeros, CVector, Matrix, Vector, ZeroDirection};
use crate::plant::{PlantModel, SimTrace};

/// Zero-dynamics attack `u_a(t) = u0 e^{lambda0 (t - t_a)}` with state offset `x̃0`.
///
/// For a complex `lambda0` the injected signal is `2 Re(u0 e^{lambda0 t})`.
#[derive(Debug, Clone)]
pub struct ZdaAttack {
    pub lambda0: Complex<f64>,
    pub x0: CVector,
    pub u0: CVector,
    pub t_a: f64,
    /// Multiplies both directions.
    pub scale: f64,
    pub residual: f64,
    outputs: usize,
}

impl ZdaAttack {
    pub fn from_direction(z: &ZeroDirection, t_a: f64, scale: f64, outputs: usize) -> Self {
        ZdaAttack {
            lambda0: z.lambda0,
            x0: z.x0.clone(),
            u0: z.u0.clone(),
            t_a,
            scale,
            residual: z.residual,
            outputs,
        }
    }

    /// Copy with both directions multiplied by `scale`.
    pub fn rescaled(&self, scale: f64) -> Self {
        ZdaAttack {
            scale,
            ..self.clone()
        }
    }

    pub fn is_real(&self) -> bool {
        self.lambda0.im == 0.0
            || self.lambda0.im.abs() <= 1e-9 * self.lambda0.norm().max(1.0)
    }

    fn weight(&self, t: f64) -> Complex<f64> {
        let pair = if self.is_real() { 1.0 } else { 2.0 };
        (self.lambda0 * (t - self.t_a)).exp() * (pair * self.scale)
    }

    /// Real state offset `x̃(t)`; equals `x̃0` at `t_a`.
    pub fn state_offset(&self, t: f64) -> Vector {
        let w = self.weight(t);
        self.x0.map(|v| (v * w).re)
    }

    pub fn x_tilde0(&self) -> Vector {
        self.state_offset(self.t_a)
    }

    pub fn signal(&self, t: f64) -> Vector {
        if t < self.t_a {
            return Vector::zeros(self.u0.len());
        }
        let w = self.weight(t);
        self.u0.map(|v| (v * w).re)
    }
}

pub fn zda_signal(z: &ZdaAttack, t: f64) -> Vector {
    z.signal(t)
}

/// Ordering key: unstable zeros first, then real ones, then largest real part, then smallest |Im|.
fn zda_preference(z: &ZeroDirection) -> (bool, bool, f64, f64) {
    (z.lambda0.re > 1e-9, z.is_real(), z.lambda0.re, -z.lambda0.im.abs())
}

/// Picks a zeroing direction of `(A_0, B, C, 0)`, preferring unstable real zeros.
pub fn synth_zda(p: &PlantModel) -> Result<Option<ZdaAttack>> {
    if p.attacked_actuators.is_empty() {
        return Ok(None);
    }
    let a = p.a(0)?;
    let b = p.b();
    let c = p.c();
    let d = Matrix::zeros(c.nrows(), b.ncols());
    let zeros = invariant_zeros(&a, &b, &c, &d)?;
    let best = zeros
        .iter()
        .filter(|z| z.x0.norm() > 1e-9)
        .max_by(|x, y| {
            zda_preference(x)
                .partial_cmp(&zda_preference(y))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    Ok(best.map(|z| ZdaAttack::from_direction(z, 0.0, 1.0, c.nrows())))
}

/// Attacker-side replica of the normal-mode plant producing `u_s = C x̃`.
#[derive(Debug, Clone)]
pub struct CovertAttacker {
    pub replica_a: Matrix,
    pub replica_b: Matrix,
    pub replica_c: Matrix,
    /// Constant step injected on every attacked actuator from `t_a`.
    pub magnitude: f64,
    pub t_a: f64,
}

impl CovertAttacker {
    pub fn new(p: &PlantModel, magnitude: f64, t_a: f64) -> Result<Self> {
        if p.attacked_actuators.is_empty() {
            return Err(Error::invalid("covert attack needs at least one actuator"));
        }
        Ok(CovertAttacker {
            replica_a: p.a(0)?,
            replica_b: p.b(),
            replica_c: p.c(),
            magnitude,
            t_a,
        })
    }

    pub fn ua(&self, t: f64) -> Vector {
        let m = self.replica_b.ncols();
        if t >= self.t_a {
            Vector::from_element(m, self.magnitude)
        } else {
            Vector::zeros(m)
        }
    }

    /// `d/dt x̃ = Ã x̃ + B u_a`.
    pub fn replica_deriv(&self, t: f64, x_tilde: &Vector) -> Vector {
        &self.replica_a * x_tilde + &self.replica_b * self.ua(t)
    }

    pub fn us(&self, x_tilde: &Vector) -> Vector {
        &self.replica_c * x_tilde
    }

    /// One RK4 step of the replica; returns `(u_a(t), u_s(t))` at the step start.
    pub fn covert_step(&self, t: f64, dt: f64, x_tilde: &mut Vector) -> (Vector, Vector) {
        let out = (self.ua(t), self.us(x_tilde));
        *x_tilde = crate::plant::rk4_step(|tt, x| self.replica_deriv(tt, x), t, x_tilde, dt);
        out
    }
}

#[derive(Debug, Clone)]
pub enum AttackDriver {
    None { inputs: usize, outputs: usize },
    Zda(ZdaAttack),
    Covert(CovertAttacker),
}

impl AttackDriver {
    pub fn none(p: &PlantModel) -> Self {
        AttackDriver::None {
            inputs: p.attacked_actuators.len(),
            outputs: p.output_dim(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackDriver::None { .. } => "none",
            AttackDriver::Zda(_) => "zda",
            AttackDriver::Covert(_) => "covert",
        }
    }

    /// Size of the attacker's internal state.
    pub fn replica_dim(&self) -> usize {
        match self {
            AttackDriver::Covert(c) => c.replica_a.nrows(),
            _ => 0,
        }
    }

    pub fn ua(&self, t: f64) -> Vector {
        match self {
            AttackDriver::None { inputs, .. } => Vector::zeros(*inputs),
            AttackDriver::Zda(z) => z.signal(t),
            AttackDriver::Covert(c) => c.ua(t),
        }
    }

    pub fn us(&self, _t: f64, replica: &Vector) -> Vector {
        match self {
            AttackDriver::None { outputs, .. } => Vector::zeros(*outputs),
            AttackDriver::Zda(z) => Vector::zeros(z.outputs),
            AttackDriver::Covert(c) => c.us(replica),
        }
    }

    pub fn replica_deriv(&self, t: f64, replica: &Vector) -> Vector {
        match self {
            AttackDriver::Covert(c) => c.replica_deriv(t, replica),
            _ => Vector::zeros(0),
        }
    }

    pub fn t_a(&self) -> Option<f64> {
        match self {
            AttackDriver::None { .. } => None,
            AttackDriver::Zda(z) => Some(z.t_a),
            AttackDriver::Covert(c) => Some(c.t_a),
        }
    }

    pub(crate) fn check_dims(&self, p: &PlantModel) -> Result<()> {
        let (m, out) = match self {
            AttackDriver::None { inputs, outputs } => (*inputs, *outputs),
            AttackDriver::Zda(z) => {
                if z.x0.len() != p.state_dim() {
                    return Err(Error::dims("zda state direction does not match the plant"));
                }
                (z.u0.len(), z.outputs)
            }
            AttackDriver::Covert(c) => {
                if c.replica_a.nrows() != p.state_dim() {
                    return Err(Error::dims("covert replica does not match the plant"));
                }
                (c.replica_b.ncols(), c.replica_c.nrows())
            }
        };
        if m != p.attacked_actuators.len() || out != p.output_dim() {
            return Err(Error::dims(format!(
                "attack has {m} inputs/{out} outputs, plant has {}/{}",
                p.attacked_actuators.len(),
                p.output_dim()
            )));
        }
        Ok(())
    }
}

/// Whether the outputs of two runs agree within `tol` over `[t0, t1]`.
pub fn verify_stealthy(tr_attacked: &SimTrace, tr_free: &SimTrace, window: (f64, f64), tol: f64) -> Result<bool> {
    Ok(output_gap(tr_attacked, tr_free, window)? <= tol)
}

/// `max ||y_a - y_f||_inf` over grid points in `[t0, t1]`.
pub fn output_gap(tr_attacked: &SimTrace, tr_free: &SimTrace, window: (f64, f64)) -> Result<f64> {
    let len = tr_attacked.len().min(tr_free.len());
    let mut gap: f64 = 0.0;
    for k in 0..len {
        let t = tr_attacked.times[k];
        if (t - tr_free.times[k]).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(Error::dims(format!("time grids differ at index {k}")));
        }
        if t < window.0 || t > window.1 {
            continue;
        }
        let (ya, yf) = (&tr_attacked.outputs[k], &tr_free.outputs[k]);
        if ya.len() != yf.len() {
            return Err(Error::dims("output dimensions differ"));
        }
        gap = gap.max((ya - yf).amax());
    }
    Ok(gap)
}
