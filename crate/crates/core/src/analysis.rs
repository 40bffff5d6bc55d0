//! Static and trajectory-level checks of the observability, privacy, local
//! detectability and safe-switching conditions.

use std::collections::BTreeSet;

use nalgebra::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{
    eig_sym, image_basis, invariant_zeros, matrix_exp, nullspace_basis, rank_tol, trivial_intersection, Matrix,
    SubspaceBasis, Vector, TOL_REL,
};
use crate::observers::{cluster_mode_matrix, local_output_matrix};
use crate::plant::{PlantModel, SimTrace};
use crate::topology::{components_of_delta, delta_laplacian, node_degree, DeltaDecomposition, PartitionedModel};

/// Eigenvalue gaps at or below this value count as repeated eigenvalues.
pub const GAP_TOL: f64 = 1e-6;
/// Eigenvector row differences at or below this value count as equal.
pub const ROW_DIFF_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ObservabilityReport {
    pub rank: usize,
    /// `N_1^m` from the backward recursion.
    pub unobs_basis: SubspaceBasis,
    /// `N_k^m` for `k = 1..m`.
    pub per_segment_kernels: Vec<SubspaceBasis>,
    /// Kernel of the stacked matrix, computed directly.
    pub direct_basis: SubspaceBasis,
}

impl ObservabilityReport {
    /// Largest principal angle between the recursive and the direct kernel.
    pub fn route_disagreement(&self) -> f64 {
        self.unobs_basis.principal_angle(&self.direct_basis)
    }
}

/// `col(C, C A, ..., C A^{n-1})`.
pub fn observability_matrix(a: &Matrix, c: &Matrix) -> Matrix {
    let n = a.nrows();
    let p = c.nrows();
    let mut o = Matrix::zeros(p * n, n);
    let mut blk = c.clone();
    for k in 0..n {
        o.rows_mut(k * p, p).copy_from(&blk);
        blk = &blk * a;
    }
    o
}

/// Unobservable subspace over the mode sequence `(A_k, tau_k)`.
pub fn switched_observability(modes: &[(Matrix, f64)], c: &Matrix) -> Result<ObservabilityReport> {
    let Some((a0, _)) = modes.first() else {
        return Err(Error::invalid("switched_observability needs at least one mode"));
    };
    let n = a0.nrows();
    for (k, (a, tau)) in modes.iter().enumerate() {
        if a.shape() != (n, n) || c.ncols() != n {
            return Err(Error::dims(format!("segment {} does not conform", k + 1)));
        }
        if !(*tau > 0.0) {
            return Err(Error::invalid(format!("segment {} has non-positive dwell time", k + 1)));
        }
    }
    let m = modes.len();
    let blocks: Vec<Matrix> = modes.iter().map(|(a, _)| observability_matrix(a, c)).collect();
    let flows: Vec<Matrix> = modes
        .iter()
        .map(|(a, tau)| matrix_exp(a, *tau))
        .collect::<Result<_>>()?;

    // Direct route: kernel of the stacked matrix.
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut stacked = Matrix::zeros(rows, n);
    let mut transport = Matrix::identity(n, n);
    let mut offset = 0;
    for k in 0..m {
        let r = blocks[k].nrows();
        stacked.rows_mut(offset, r).copy_from(&(&blocks[k] * &transport));
        offset += r;
        transport = &flows[k] * transport;
    }
    let direct_basis = nullspace_basis(&stacked, TOL_REL)?;
    let rank = n - direct_basis.dim();

    // Backward recursion: N_k = ker(O_k) ∩ e^{-A_k tau_k} N_{k+1}.
    let mut kernels = vec![SubspaceBasis::zero(n); m];
    kernels[m - 1] = nullspace_basis(&blocks[m - 1], TOL_REL)?;
    for k in (0..m - 1).rev() {
        let next = &kernels[k + 1];
        let leave = Matrix::identity(n, n) - next.projector();
        let mut cond = Matrix::zeros(blocks[k].nrows() + n, n);
        cond.rows_mut(0, blocks[k].nrows()).copy_from(&blocks[k]);
        cond.rows_mut(blocks[k].nrows(), n)
            .copy_from(&(leave * &flows[k]));
        kernels[k] = nullspace_basis(&cond, TOL_REL)?;
    }
    Ok(ObservabilityReport {
        rank,
        unobs_basis: kernels[0].clone(),
        per_segment_kernels: kernels,
        direct_basis,
    })
}

/// `[1/sqrt(N); 0]`.
pub fn consensus_direction(n: usize) -> Vector {
    let mut w = Vector::zeros(2 * n);
    let s = 1.0 / (n as f64).sqrt();
    for i in 0..n {
        w[i] = s;
    }
    w
}

/// True iff the consensus direction is in `ker C` and is a zero-eigenvalue
/// eigenvector of every mode, so it stays unobservable under any switching.
pub fn privacy_check(p: &PlantModel) -> Result<bool> {
    let w = consensus_direction(p.n());
    if (p.c() * &w).amax() > 1e-12 {
        return Ok(false);
    }
    for q in 0..p.lib.len() {
        if (p.a(q)? * &w).amax() > 1e-10 {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalDetectabilityVerdict {
    pub cluster: usize,
    pub monitor: usize,
    pub monitor_degree: usize,
    pub required_degree: usize,
    pub cond_degree: bool,
    pub cond_rank: bool,
    pub cond_pencil: bool,
    /// Pencil zeros `(re, im)` found per mode; empty when condition (iii) holds.
    pub pencil_zeros: Vec<Vec<(f64, f64)>>,
    /// Set when the pencil is wide or degenerate in some mode.
    pub pencil_note: Option<String>,
    pub all_pass: bool,
}

/// Conditions (i)-(iii) for a local observer at `monitor` measuring `measured`,
/// assuming the actuators `assumed_attacked` of the cluster are compromised.
#[allow(clippy::too_many_arguments)]
pub fn local_detectability_check(
    p: &PlantModel,
    pm: &PartitionedModel,
    cluster: usize,
    monitor: usize,
    measured: &[usize],
    assumed_attacked: &[usize],
) -> Result<LocalDetectabilityVerdict> {
    let blk = pm
        .blocks
        .get(cluster)
        .ok_or_else(|| Error::invalid(format!("cluster {} does not exist", cluster + 1)))?;
    if blk.local_index(monitor).is_none() {
        return Err(Error::invalid(format!(
            "monitor {} is not in cluster {}",
            monitor + 1,
            cluster + 1
        )));
    }
    let normal = p.lib.mode(0)?;
    let monitor_degree = node_degree(normal, monitor)?;
    let mut attacked: Vec<usize> = Vec::new();
    for &f in assumed_attacked {
        let Some(i) = blk.local_index(f) else {
            return Err(Error::invalid(format!("assumed attacked node {} is outside cluster {}", f + 1, cluster + 1)));
        };
        attacked.push(i);
    }
    attacked.sort_unstable();
    attacked.dedup();
    let required_degree = pm.partition.cuts_of(cluster).len() + attacked.len();
    let cond_degree = monitor_degree >= required_degree;

    let c = local_output_matrix(&blk.nodes, measured)?;
    let e = &blk.e;
    let cond_rank = rank_tol(&(&c * e), TOL_REL)? == rank_tol(e, TOL_REL)?;

    let k = blk.size();
    let mut inputs = Matrix::zeros(2 * k, attacked.len() + e.ncols());
    for (col, &i) in attacked.iter().enumerate() {
        inputs[(k + i, col)] = 1.0;
    }
    inputs.columns_mut(attacked.len(), e.ncols()).copy_from(&(-e));
    let d = Matrix::zeros(c.nrows(), inputs.ncols());
    let mut cond_pencil = true;
    let mut pencil_zeros = Vec::new();
    let mut pencil_note = None;
    for q in 0..p.lib.len() {
        let a = cluster_mode_matrix(pm, cluster, q, p.alpha, p.gamma);
        match invariant_zeros(&a, &inputs, &c, &d) {
            Ok(zs) => {
                if !zs.is_empty() {
                    cond_pencil = false;
                }
                pencil_zeros.push(zs.iter().map(|z| (z.lambda0.re, z.lambda0.im)).collect());
            }
            Err(Error::UnsupportedDegenerate(msg)) => {
                cond_pencil = false;
                pencil_note = Some(format!("mode {}: {msg}", q + 1));
                pencil_zeros.push(Vec::new());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(LocalDetectabilityVerdict {
        cluster,
        monitor,
        monitor_degree,
        required_degree,
        cond_degree,
        cond_rank,
        cond_pencil,
        pencil_zeros,
        pencil_note,
        all_pass: cond_degree && cond_rank && cond_pencil,
    })
}

#[derive(Debug, Clone)]
pub struct SafeSwitchVerdict {
    pub mode: usize,
    /// False when the candidate equals the normal mode.
    pub is_switch: bool,
    pub cond_image_kernel: bool,
    pub cond_distinct_eigs: bool,
    pub cond_eigvec_rows: bool,
    pub components: DeltaDecomposition,
    pub coverage_ok: bool,
    pub all_pass: bool,
    pub min_eigengap: f64,
    /// Smallest row difference over component pairs and non-consensus columns.
    pub min_row_diff: f64,
    /// `(i, j, column)` attaining `min_row_diff`.
    pub row_witness: Option<(usize, usize, usize)>,
    /// Unit vector of `Im(ΔL)` killed by the global output map, if any.
    pub kernel_witness: Option<Vector>,
}

/// Stacked `[C_x; C_v]` acting on node-space vectors.
fn node_output_map(p: &PlantModel) -> Matrix {
    let cx = p.c_x();
    let cv = p.c_v();
    let mut m = Matrix::zeros(cx.nrows() + cv.nrows(), p.n());
    m.rows_mut(0, cx.nrows()).copy_from(&cx);
    m.rows_mut(cx.nrows(), cv.nrows()).copy_from(&cv);
    m
}

/// Conditions (i)-(iii) for switching from the normal mode to mode `q`.
pub fn safe_switch_check(p: &PlantModel, q: usize) -> Result<SafeSwitchVerdict> {
    let dl = delta_laplacian(&p.lib, q)?;
    let components = components_of_delta(&dl)?;
    let is_switch = !components.is_empty();
    let map = node_output_map(p);

    let im = image_basis(&dl, TOL_REL)?;
    let cond_image_kernel = is_switch && trivial_intersection(&im, &map, TOL_REL)?;
    let kernel_witness = if is_switch && !cond_image_kernel {
        let restricted = &map * &im.basis;
        let k = nullspace_basis(&restricted, TOL_REL)?;
        (k.dim() > 0).then(|| (&im.basis * k.basis.column(0)).normalize())
    } else {
        None
    };

    let (vals, u) = eig_sym(p.lib.laplacian(q)?)?;
    let min_eigengap = vals
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let cond_distinct_eigs = min_eigengap > GAP_TOL;

    let n = p.n();
    let mut min_row_diff = f64::INFINITY;
    let mut row_witness = None;
    for comp in &components.components {
        for (a, &i) in comp.iter().enumerate() {
            for &j in &comp[a + 1..] {
                for l in 1..n {
                    let d = (u[(i, l)] - u[(j, l)]).abs();
                    if d < min_row_diff {
                        min_row_diff = d;
                        row_witness = Some((i, j, l));
                    }
                }
            }
        }
    }
    let cond_eigvec_rows = is_switch && min_row_diff > ROW_DIFF_TOL;

    let monitored: BTreeSet<usize> = p
        .monitored_positions
        .iter()
        .chain(&p.monitored_velocities)
        .copied()
        .collect();
    let coverage_ok = is_switch
        && components
            .components
            .iter()
            .all(|c| c.iter().any(|v| monitored.contains(v)));

    Ok(SafeSwitchVerdict {
        mode: q,
        is_switch,
        cond_image_kernel,
        cond_distinct_eigs,
        cond_eigvec_rows,
        all_pass: cond_image_kernel && cond_distinct_eigs && cond_eigvec_rows,
        components,
        coverage_ok,
        min_eigengap,
        min_row_diff,
        row_witness,
        kernel_witness,
    })
}

/// Verdicts for every non-normal mode.
pub fn safe_switch_verdicts(p: &PlantModel) -> Result<Vec<SafeSwitchVerdict>> {
    (1..p.lib.len()).map(|q| safe_switch_check(p, q)).collect()
}

/// Modes passing (i)-(iii), largest minimum eigengap first.
pub fn enumerate_safe_modes(p: &PlantModel) -> Result<Vec<usize>> {
    let mut safe: Vec<SafeSwitchVerdict> = safe_switch_verdicts(p)?.into_iter().filter(|v| v.all_pass).collect();
    safe.sort_by(|a, b| b.min_eigengap.total_cmp(&a.min_eigengap).then(a.mode.cmp(&b.mode)));
    Ok(safe.into_iter().map(|v| v.mode).collect())
}

/// `max ||col(C_x ΔL x, C_v ΔL x, C_v ΔL v)||_inf` over grid points in `window`.
pub fn markov_discrepancy(tr: &SimTrace, delta_l: &Matrix, p: &PlantModel, window: (f64, f64)) -> Result<f64> {
    let n = p.n();
    if delta_l.shape() != (n, n) {
        return Err(Error::dims("delta Laplacian does not match the plant"));
    }
    let cx = p.c_x() * delta_l;
    let cv = p.c_v() * delta_l;
    let mut worst: f64 = 0.0;
    for (t, s) in tr.times.iter().zip(&tr.states) {
        if *t < window.0 || *t > window.1 {
            continue;
        }
        let x = s.rows(0, n);
        let v = s.rows(n, n);
        let d = (&cx * x).amax().max((&cv * x).amax()).max((&cv * v).amax());
        worst = worst.max(d);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwitchBoundedness {
    Bounded,
    Divergent,
}

/// Bounded iff no switched component touches the attack-affected nodes.
pub fn classify_switch_boundedness(z_support: &BTreeSet<usize>, dd: &DeltaDecomposition) -> SwitchBoundedness {
    if dd
        .components
        .iter()
        .any(|c| c.iter().any(|v| z_support.contains(v)))
    {
        SwitchBoundedness::Divergent
    } else {
        SwitchBoundedness::Bounded
    }
}

/// Nodes whose position or velocity entry of `x̃` is non-negligible.
pub fn attack_support(x_tilde: &Vector, rel_tol: f64) -> BTreeSet<usize> {
    let n = x_tilde.len() / 2;
    let scale = x_tilde.amax();
    if scale == 0.0 {
        return BTreeSet::new();
    }
    (0..n)
        .filter(|&i| x_tilde[i].abs().max(x_tilde[n + i].abs()) > rel_tol * scale)
        .collect()
}

/// Zeros of `(A_0, B, C, 0)` as `(re, im)` pairs, for reports.
pub fn plant_zeros(p: &PlantModel) -> Result<Vec<Complex<f64>>> {
    let b = p.b();
    let c = p.c();
    Ok(invariant_zeros(&p.a(0)?, &b, &c, &Matrix::zeros(c.nrows(), b.ncols()))?
        .into_iter()
        .map(|z| z.lambda0)
        .collect())
}
