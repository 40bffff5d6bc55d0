//! Centralized Luenberger observer and per-cluster unknown-input observers.

use crate::error::{Error, Result, UioFailure};
use crate::numerics::{
    care_filter, eig_sym, eigenvalues, maximal_output_nulling, pinv, rank_tol, spectral_abscissa, Matrix,
    SubspaceBasis, Vector, TOL_REL,
};
use crate::plant::{consensus_matrix, rk4_step, selection, PlantModel, SimTrace};
use crate::topology::{PartitionedModel, TopologyLibrary};

/// Default decay margin for observable observer modes.
pub const DEFAULT_ETA: f64 = 0.5;

/// Calibration ignores residuals before this time.
pub const CALIBRATION_TRANSIENT: f64 = 5.0;

/// Absolute floor added to calibrated thresholds.
pub const THRESHOLD_FLOOR: f64 = 1e-6;

/// Riccati shifts tried in order, as multiples added to `eta`.
const SHIFT_OFFSETS: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

fn unobservable(a: &Matrix, c: &Matrix) -> Result<SubspaceBasis> {
    maximal_output_nulling(a, &Matrix::zeros(a.nrows(), 0), c)
}

/// Largest real part of `a - k c` on the quotient by the unobservable subspace of `(a, c)`.
pub fn observable_abscissa(a: &Matrix, k: &Matrix, c: &Matrix) -> Result<f64> {
    let vo = unobservable(a, c)?.complement();
    if vo.dim() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let m = a - k * c;
    Ok(spectral_abscissa(&(vo.basis.transpose() * m * &vo.basis)))
}

/// Output-injection gain from a shifted filter Riccati equation on the observable part.
///
/// Observable eigenvalues of `a - k c` end up left of `-shift`.
fn riccati_gain(a: &Matrix, c: &Matrix, shift: f64) -> Result<Matrix> {
    let n = a.nrows();
    let vo = unobservable(a, c)?.complement();
    if vo.dim() == 0 || c.nrows() == 0 {
        return Ok(Matrix::zeros(n, c.nrows()));
    }
    let aoo = vo.basis.transpose() * (a + Matrix::identity(n, n) * shift) * &vo.basis;
    let co = c * &vo.basis;
    let k = vo.dim();
    let x = care_filter(&aoo, &co, &Matrix::identity(k, k))?;
    Ok(&vo.basis * x * co.transpose())
}

/// Constant central gain `H` and the achieved observable abscissa per mode.
#[derive(Debug, Clone)]
pub struct CentralGain {
    pub h: Matrix,
    pub eta: f64,
    pub shift: f64,
    pub abscissa_per_mode: Vec<f64>,
}

/// Observable abscissa of `A_q - H C` for every library mode.
pub fn central_margins(p: &PlantModel, h: &Matrix) -> Result<Vec<f64>> {
    let c = p.c();
    if h.shape() != (p.state_dim(), c.nrows()) {
        return Err(Error::dims("central gain has the wrong shape"));
    }
    (0..p.lib.len()).map(|q| observable_abscissa(&p.a(q)?, h, &c)).collect()
}

/// Rejects `h` unless every mode's observable part decays at rate `eta`.
pub fn validate_central_gain(p: &PlantModel, h: &Matrix, eta: f64) -> Result<Vec<f64>> {
    let margins = central_margins(p, h)?;
    if let Some(q) = margins.iter().position(|&m| m > -eta) {
        return Err(Error::DesignInfeasible(format!(
            "central observer: mode {} has observable eigenvalue with real part {:.4} > -{eta}",
            q + 1,
            margins[q]
        )));
    }
    Ok(margins)
}

/// Designs one gain `H` for the normal mode and checks it against every mode.
pub fn design_central_gain(p: &PlantModel, eta: f64) -> Result<CentralGain> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    let a = p.a(0)?;
    let c = p.c();
    let mut last = None;
    for off in SHIFT_OFFSETS {
        let shift = eta + off;
        let h = match riccati_gain(&a, &c, shift) {
            Ok(h) => h,
            Err(e) => {
                last = Some(e);
                continue;
            }
        };
        match validate_central_gain(p, &h, eta) {
            Ok(abscissa_per_mode) => {
                return Ok(CentralGain {
                    h,
                    eta,
                    shift,
                    abscissa_per_mode,
                })
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::DesignInfeasible("central observer: no shift tried".into())))
}

/// `x̂' = A_0 x̂ + H (y - C x̂)`, pinned to the normal mode.
#[derive(Debug, Clone)]
pub struct CentralObserver {
    pub gain_h: Matrix,
    pub mode_matrix: Matrix,
    pub c: Matrix,
}

impl CentralObserver {
    pub fn new(p: &PlantModel, h: Matrix) -> Result<Self> {
        Ok(CentralObserver {
            gain_h: h,
            mode_matrix: p.a(0)?,
            c: p.c(),
        })
    }

    pub fn deriv(&self, xhat: &Vector, y: &Vector) -> Vector {
        &self.mode_matrix * xhat + &self.gain_h * (y - &self.c * xhat)
    }

    /// `r0 = y - C x̂`.
    pub fn residual(&self, xhat: &Vector, y: &Vector) -> Vector {
        y - &self.c * xhat
    }
}

/// Cluster-local unknown-input observer for every library mode.
#[derive(Debug, Clone)]
pub struct UioRealization {
    pub cluster_index: usize,
    /// Global indices of the cluster nodes, ascending.
    pub nodes: Vec<usize>,
    /// Global indices of the locally measured nodes (position and velocity each).
    pub measured: Vec<usize>,
    pub c: Matrix,
    pub e: Matrix,
    pub h: Matrix,
    pub t: Matrix,
    pub abar_per_mode: Vec<Matrix>,
    pub kbar_per_mode: Vec<Matrix>,
    pub k_per_mode: Vec<Matrix>,
    pub f_per_mode: Vec<Matrix>,
    /// Spectral abscissa of each `F_q`.
    pub abscissa_per_mode: Vec<f64>,
    pub eta: f64,
    /// Minimum dwell time certifying stability of the switched error dynamics.
    pub dwell_time: f64,
}

/// Local output matrix: position and velocity rows of `measured` within `nodes`.
pub fn local_output_matrix(nodes: &[usize], measured: &[usize]) -> Result<Matrix> {
    let k = nodes.len();
    let mut local = Vec::with_capacity(measured.len());
    for &m in measured {
        let Ok(i) = nodes.binary_search(&m) else {
            return Err(Error::invalid(format!("measured node {} is outside the cluster", m + 1)));
        };
        local.push(i);
    }
    let s = selection(&local, k);
    let mut c = Matrix::zeros(2 * local.len(), 2 * k);
    c.view_mut((0, 0), (local.len(), k)).copy_from(&s);
    c.view_mut((local.len(), k), (local.len(), k)).copy_from(&s);
    Ok(c)
}

/// Cluster system matrix `A^i_q` built from the intra-cluster Laplacian block.
pub fn cluster_mode_matrix(pm: &PartitionedModel, i: usize, q: usize, alpha: f64, gamma: f64) -> Matrix {
    consensus_matrix(&pm.blocks[i].intra_laplacian[q], alpha, gamma)
}

/// `tau_min = ln(mu) / eta` from per-mode Lyapunov matrices of `F_q + eta/2 I`.
pub fn dwell_time(f_per_mode: &[Matrix], eta: f64) -> Result<f64> {
    if f_per_mode.len() < 2 {
        return Ok(0.0);
    }
    let mut bounds = Vec::with_capacity(f_per_mode.len());
    for f in f_per_mode {
        let n = f.nrows();
        if n == 0 {
            return Ok(0.0);
        }
        let shifted = f + Matrix::identity(n, n) * (0.5 * eta);
        let p = crate::numerics::lyapunov(&shifted, &Matrix::identity(n, n))?;
        let (vals, _) = eig_sym(&p)?;
        if vals[0] <= 0.0 {
            return Err(Error::Numerical("dwell time: Lyapunov matrix is not positive definite".into()));
        }
        bounds.push((vals[0], vals[n - 1]));
    }
    let mut mu: f64 = 1.0;
    for (p, &(_, pmax)) in bounds.iter().enumerate() {
        for (q, &(qmin, _)) in bounds.iter().enumerate() {
            if p != q {
                mu = mu.max(pmax / qmin);
            }
        }
    }
    Ok(mu.ln() / eta)
}

/// Realizes the UIO of cluster `i` with local measurements on `measured`.
pub fn design_uio(
    pm: &PartitionedModel,
    i: usize,
    measured: &[usize],
    alpha: f64,
    gamma: f64,
    eta: f64,
) -> Result<UioRealization> {
    let blk = pm
        .blocks
        .get(i)
        .ok_or_else(|| Error::invalid(format!("cluster {} does not exist", i + 1)))?;
    let mut measured = measured.to_vec();
    measured.sort_unstable();
    measured.dedup();
    let c = local_output_matrix(&blk.nodes, &measured)?;
    let e = blk.e.clone();
    let n = 2 * blk.size();
    let ce = &c * &e;
    if rank_tol(&ce, TOL_REL)? != rank_tol(&e, TOL_REL)? {
        return Err(Error::UioInfeasible {
            kind: UioFailure::Rank,
            detail: format!("cluster {}: rank(C E) < rank(E)", i + 1),
        });
    }
    let h = &e * pinv(&ce, TOL_REL)?;
    let t = Matrix::identity(n, n) - &h * &c;

    let modes = blk.intra_laplacian.len();
    let mut out = UioRealization {
        cluster_index: i,
        nodes: blk.nodes.clone(),
        measured,
        c,
        e,
        h,
        t,
        abar_per_mode: Vec::with_capacity(modes),
        kbar_per_mode: Vec::with_capacity(modes),
        k_per_mode: Vec::with_capacity(modes),
        f_per_mode: Vec::with_capacity(modes),
        abscissa_per_mode: Vec::with_capacity(modes),
        eta,
        dwell_time: 0.0,
    };
    for q in 0..modes {
        let a = cluster_mode_matrix(pm, i, q, alpha, gamma);
        let abar = &out.t * a;
        let vu = unobservable(&abar, &out.c)?;
        if vu.dim() > 0 {
            let restricted = vu.basis.transpose() * &abar * &vu.basis;
            let worst = spectral_abscissa(&restricted);
            if worst > -eta {
                return Err(Error::UioInfeasible {
                    kind: UioFailure::Detectability,
                    detail: format!(
                        "cluster {}, mode {}: unobservable eigenvalue with real part {worst:.4} > -{eta}",
                        i + 1,
                        q + 1
                    ),
                });
            }
        }
        let mut chosen = None;
        for off in SHIFT_OFFSETS {
            let kbar = riccati_gain(&abar, &out.c, eta + off)?;
            let f = &abar - &kbar * &out.c;
            let abscissa = spectral_abscissa(&f);
            if abscissa <= -eta {
                chosen = Some((kbar, f, abscissa));
                break;
            }
        }
        let Some((kbar, f, abscissa)) = chosen else {
            return Err(Error::UioInfeasible {
                kind: UioFailure::Detectability,
                detail: format!("cluster {}, mode {}: no gain reaches margin {eta}", i + 1, q + 1),
            });
        };
        out.k_per_mode.push(&f * &out.h);
        out.abar_per_mode.push(abar);
        out.kbar_per_mode.push(kbar);
        out.f_per_mode.push(f);
        out.abscissa_per_mode.push(abscissa);
    }
    out.dwell_time = dwell_time(&out.f_per_mode, eta)?;
    Ok(out)
}

impl UioRealization {
    pub fn state_dim(&self) -> usize {
        2 * self.nodes.len()
    }

    /// `y_loc` taken directly from the full plant state.
    pub fn local_output(&self, full: &Vector) -> Vector {
        let n = full.len() / 2;
        let m = self.measured.len();
        let mut y = Vector::zeros(2 * m);
        for (r, &v) in self.measured.iter().enumerate() {
            y[r] = full[v];
            y[m + r] = full[n + v];
        }
        y
    }

    /// Cluster state `col(x_i, v_i)` from the full plant state.
    pub fn local_state(&self, full: &Vector) -> Vector {
        let n = full.len() / 2;
        let k = self.nodes.len();
        let mut s = Vector::zeros(2 * k);
        for (a, &v) in self.nodes.iter().enumerate() {
            s[a] = full[v];
            s[k + a] = full[n + v];
        }
        s
    }

    /// `z' = F_q z + (K_q + K̄_q) y`.
    pub fn deriv(&self, q: usize, z: &Vector, y: &Vector) -> Vector {
        &self.f_per_mode[q] * z + (&self.k_per_mode[q] + &self.kbar_per_mode[q]) * y
    }

    /// `x̂ = z + h y`.
    pub fn estimate(&self, z: &Vector, y: &Vector) -> Vector {
        z + &self.h * y
    }

    /// `r = y - C x̂`.
    pub fn residual(&self, z: &Vector, y: &Vector) -> Vector {
        y - &self.c * self.estimate(z, y)
    }

    /// Observer state giving the estimate `xhat0` at output `y0`.
    pub fn initial_state(&self, xhat0: &Vector, y0: &Vector) -> Vector {
        xhat0 - &self.h * y0
    }

    /// Largest absolute violation of `(hC - I)E = 0`, `T = I - hC`, `F = T A - K̄ C`, `K = F h`.
    pub fn algebra_error(&self, pm: &PartitionedModel, alpha: f64, gamma: f64) -> f64 {
        let n = self.state_dim();
        let id = Matrix::identity(n, n);
        let mut err = ((&self.h * &self.c - &id) * &self.e).amax();
        err = err.max((&self.t - (&id - &self.h * &self.c)).amax());
        for q in 0..self.f_per_mode.len() {
            let a = cluster_mode_matrix(pm, self.cluster_index, q, alpha, gamma);
            let abar = &self.t * &a;
            err = err.max((&abar - &self.abar_per_mode[q]).amax());
            err = err.max((&self.f_per_mode[q] - (&abar - &self.kbar_per_mode[q] * &self.c)).amax());
            err = err.max((&self.k_per_mode[q] - &self.f_per_mode[q] * &self.h).amax());
        }
        err
    }
}

/// Observer residuals on the simulation grid.
#[derive(Debug, Clone, Default)]
pub struct ResidualTrace {
    pub times: Vec<f64>,
    pub r0: Vec<Vector>,
    /// One series per local observer.
    pub r_local: Vec<Vec<Vector>>,
}

impl ResidualTrace {
    pub fn r0_norms(&self) -> Vec<f64> {
        self.r0.iter().map(|r| r.amax()).collect()
    }

    pub fn local_norms(&self, j: usize) -> Vec<f64> {
        self.r_local[j].iter().map(|r| r.amax()).collect()
    }
}

/// Value of a gridded signal at `times[k] + dt/2` by cubic Lagrange interpolation.
fn midpoint(values: &[Vector], k: usize) -> Vector {
    let n = values.len();
    if n < 4 || k == 0 || k + 2 >= n {
        return (&values[k] + &values[(k + 1).min(n - 1)]) * 0.5;
    }
    (&values[k] * 9.0 + &values[k + 1] * 9.0 - &values[k - 1] - &values[k + 2]) / 16.0
}

/// Integrates `x' = g(x, u(t))` along a gridded input, with `u` interpolated at half steps.
fn drive<G: Fn(usize, &Vector, &Vector) -> Vector>(inputs: &[Vector], times: &[f64], x0: Vector, g: G) -> Vec<Vector> {
    let mut out = Vec::with_capacity(times.len());
    let mut x = x0;
    out.push(x.clone());
    for k in 0..times.len().saturating_sub(1) {
        let dt = times[k + 1] - times[k];
        let mid = midpoint(inputs, k);
        let t0 = times[k];
        let rhs = |t: f64, s: &Vector| {
            let u = if t <= t0 {
                &inputs[k]
            } else if t >= t0 + dt {
                &inputs[k + 1]
            } else {
                &mid
            };
            g(k, s, u)
        };
        x = rk4_step(rhs, t0, &x, dt);
        out.push(x.clone());
    }
    out
}

/// Runs the central observer on a recorded trace and returns its residuals.
pub fn central_observer_run(p: &PlantModel, h: &Matrix, tr: &SimTrace, xhat0: &Vector) -> Result<ResidualTrace> {
    let obs = CentralObserver::new(p, h.clone())?;
    if xhat0.len() != p.state_dim() {
        return Err(Error::dims("central observer initial state"));
    }
    let states = drive(&tr.outputs, &tr.times, xhat0.clone(), |_, xh, y| obs.deriv(xh, y));
    let r0 = states
        .iter()
        .zip(&tr.outputs)
        .map(|(xh, y)| obs.residual(xh, y))
        .collect();
    Ok(ResidualTrace {
        times: tr.times.clone(),
        r0,
        r_local: Vec::new(),
    })
}

/// Runs a local observer on a recorded trace, following the trace's modes.
///
/// `xhat0` is the initial cluster estimate (zero by default).
pub fn uio_run(u: &UioRealization, tr: &SimTrace, xhat0: &Vector) -> Result<Vec<Vector>> {
    if xhat0.len() != u.state_dim() {
        return Err(Error::dims("local observer initial state"));
    }
    if tr.is_empty() {
        return Ok(Vec::new());
    }
    let ys: Vec<Vector> = tr.states.iter().map(|s| u.local_output(s)).collect();
    let z0 = u.initial_state(xhat0, &ys[0]);
    let states = drive(&ys, &tr.times, z0, |k, z, y| u.deriv(tr.modes[k], z, y));
    Ok(states.iter().zip(&ys).map(|(z, y)| u.residual(z, y)).collect())
}

/// Threshold from an attack-free residual series: `2 * max_{t > transient} |r| + floor`.
pub fn calibrate_threshold(times: &[f64], norms: &[f64], transient: f64) -> f64 {
    let peak = times
        .iter()
        .zip(norms)
        .filter(|(t, _)| **t > transient)
        .map(|(_, r)| *r)
        .fold(0.0, f64::max);
    2.0 * peak + THRESHOLD_FLOOR
}

/// Eigenvalues of `A_q - H C`, for reporting.
pub fn closed_loop_eigenvalues(p: &PlantModel, h: &Matrix, q: usize) -> Result<Vec<nalgebra::Complex<f64>>> {
    Ok(eigenvalues(&(p.a(q)? - h * p.c())))
}

/// Convenience: designs every local observer named by `(cluster, measured nodes)`.
pub fn design_uios(
    lib: &TopologyLibrary,
    pm: &PartitionedModel,
    monitors: &[(usize, Vec<usize>)],
    alpha: f64,
    gamma: f64,
    eta: f64,
) -> Result<Vec<UioRealization>> {
    if lib.len() != pm.blocks.first().map(|b| b.intra_laplacian.len()).unwrap_or(lib.len()) {
        return Err(Error::dims("partition was built for a different library"));
    }
    monitors
        .iter()
        .map(|(c, m)| design_uio(pm, *c, m, alpha, gamma, eta))
        .collect()
}
