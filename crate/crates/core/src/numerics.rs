//! Dense linear-algebra kernels with explicit rank tolerances.
//!
//! Every rank decision counts singular values above `max(tol * scale, TOL_ABS)`,
//! where `scale` is the largest singular value of the matrix unless a caller
//! supplies an outer scale (see [`maximal_output_nulling`]).

use std::io::{Read, Write};

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMatrix = DMatrix<Complex<f64>>;
pub type CVector = DVector<Complex<f64>>;

/// Relative rank tolerance used throughout.
pub const TOL_REL: f64 = 1e-9;
/// Absolute floor below which a singular value always counts as zero.
pub const TOL_ABS: f64 = 1e-12;
pub const TOL_ORTH: f64 = 1e-10;
pub const TOL_EIG: f64 = 1e-8;
pub const TOL_ZERO: f64 = 1e-8;
const TOL_SYM: f64 = 1e-10;

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

fn ensure_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("tolerance must be positive, got {tol}")))
    }
}

fn cutoff(tol: f64, scale: f64) -> f64 {
    (tol * scale).max(TOL_ABS)
}

/// SVD with descending singular values and complete left and right bases.
struct FullSvd {
    s: Vec<f64>,
    /// rows x rows
    u: Matrix,
    /// cols x cols
    v: Matrix,
}

fn full_svd(m: &Matrix) -> FullSvd {
    let (s, u, v) = lapack::svd(m);
    FullSvd { s, u, v }
}

/// Thin wrappers over LAPACK (through ndarray-linalg); nalgebra's own SVD
/// loses accuracy on some rank-deficient inputs met here.
mod lapack {
    use nalgebra::{Complex, DMatrix};
    use ndarray::Array2;
    use ndarray_linalg::{EigVals, Eigh, SVD, UPLO};

    use super::{CMatrix, Matrix};

    fn to_nd<T: Copy>(m: &DMatrix<T>) -> Array2<T> {
        Array2::from_shape_fn(m.shape(), |(i, j)| m[(i, j)])
    }

    fn from_nd<T: nalgebra::Scalar + Copy>(a: &Array2<T>) -> DMatrix<T> {
        let (r, c) = a.dim();
        DMatrix::from_fn(r, c, |i, j| a[(i, j)])
    }

    pub fn svd(m: &Matrix) -> (Vec<f64>, Matrix, Matrix) {
        let (u, s, vt) = to_nd(m).svd(true, true).expect("LAPACK dgesvd failed");
        let u = from_nd(&u.expect("u requested"));
        let v = from_nd(&vt.expect("vt requested")).transpose();
        (s.to_vec(), u, v)
    }

    /// Singular values and the conjugate-transposed right basis rows as columns.
    pub fn svd_c(m: &CMatrix) -> (Vec<f64>, CMatrix) {
        let (_, s, vt) = to_nd(m).svd(false, true).expect("LAPACK zgesvd failed");
        (s.to_vec(), from_nd(&vt.expect("vt requested")).adjoint())
    }

    pub fn singular_values_c(m: &CMatrix) -> Vec<f64> {
        let (_, s, _) = to_nd(m).svd(false, false).expect("LAPACK zgesvd failed");
        s.to_vec()
    }

    pub fn eigvals(a: &Matrix) -> Vec<Complex<f64>> {
        to_nd(a).eigvals().expect("LAPACK dgeev failed").to_vec()
    }

    pub fn eigh(a: &Matrix) -> (Vec<f64>, Matrix) {
        let (w, v) = to_nd(a).eigh(UPLO::Lower).expect("LAPACK dsyev failed");
        (w.to_vec(), from_nd(&v))
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    full_svd(m).s
}

/// Largest singular value (0 for empty matrices).
pub fn norm2(m: &Matrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Numerical rank: singular values above `max(tol * sigma_max, 1e-12)`.
pub fn rank_tol(m: &Matrix, tol: f64) -> Result<usize> {
    ensure_tol(tol)?;
    ensure_finite(m, "matrix")?;
    let s = singular_values(m);
    let Some(&smax) = s.first() else { return Ok(0) };
    let c = cutoff(tol, smax);
    Ok(s.iter().filter(|&&v| v > c).count())
}

/// Orthonormal basis of a subspace of R^ambient_dim, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    pub ambient_dim: usize,
    pub basis: Matrix,
}

impl SubspaceBasis {
    pub fn zero(ambient_dim: usize) -> Self {
        SubspaceBasis {
            ambient_dim,
            basis: Matrix::zeros(ambient_dim, 0),
        }
    }

    pub fn full(ambient_dim: usize) -> Self {
        SubspaceBasis {
            ambient_dim,
            basis: Matrix::identity(ambient_dim, ambient_dim),
        }
    }

    /// Orthonormalized span of the columns of `m`.
    pub fn span_of(m: &Matrix) -> Self {
        image_basis(m, TOL_REL).unwrap_or_else(|_| SubspaceBasis::zero(m.nrows()))
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn projector(&self) -> Matrix {
        &self.basis * self.basis.transpose()
    }

    /// Distance of `v` from the subspace, relative to `|v|`.
    pub fn relative_distance(&self, v: &Vector) -> f64 {
        let n = v.norm();
        if n == 0.0 {
            return 0.0;
        }
        let r = v - &self.basis * (self.basis.transpose() * v);
        r.norm() / n
    }

    pub fn contains(&self, v: &Vector, tol: f64) -> bool {
        self.relative_distance(v) <= tol
    }

    /// Intersection of two subspaces of the same ambient space.
    pub fn intersect(&self, other: &SubspaceBasis) -> Result<SubspaceBasis> {
        if self.ambient_dim != other.ambient_dim {
            return Err(Error::dims(format!(
                "intersect: ambient {} vs {}",
                self.ambient_dim, other.ambient_dim
            )));
        }
        if self.dim() == 0 || other.dim() == 0 {
            return Ok(SubspaceBasis::zero(self.ambient_dim));
        }
        let mut m = Matrix::zeros(self.ambient_dim, self.dim() + other.dim());
        m.columns_mut(0, self.dim()).copy_from(&self.basis);
        m.columns_mut(self.dim(), other.dim())
            .copy_from(&(-&other.basis));
        let k = nullspace_basis(&m, TOL_REL)?;
        let coeffs = k.basis.rows(0, self.dim()).into_owned();
        Ok(SubspaceBasis::span_of(&(&self.basis * coeffs)))
    }

    /// Orthogonal complement within the ambient space.
    pub fn complement(&self) -> SubspaceBasis {
        if self.dim() == 0 {
            return SubspaceBasis::full(self.ambient_dim);
        }
        nullspace_basis(&self.basis.transpose(), TOL_REL)
            .unwrap_or_else(|_| SubspaceBasis::zero(self.ambient_dim))
    }

    /// Largest principal angle in radians; `PI / 2` when the dimensions differ.
    pub fn principal_angle(&self, other: &SubspaceBasis) -> f64 {
        if self.ambient_dim != other.ambient_dim || self.dim() != other.dim() {
            return std::f64::consts::FRAC_PI_2;
        }
        if self.dim() == 0 {
            return 0.0;
        }
        let resid = &self.basis - &other.basis * (other.basis.transpose() * &self.basis);
        norm2(&resid).min(1.0).asin()
    }

    /// Largest deviation of `basis^T basis` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.basis.transpose() * &self.basis - Matrix::identity(self.dim(), self.dim());
        g.amax()
    }
}

/// Orthonormal basis of `{x : m x = 0}`.
pub fn nullspace_basis(m: &Matrix, tol: f64) -> Result<SubspaceBasis> {
    ensure_tol(tol)?;
    ensure_finite(m, "matrix")?;
    let s = singular_values(m);
    let scale = s.first().copied().unwrap_or(0.0);
    Ok(nullspace_scaled(m, tol, scale))
}

pub(crate) fn nullspace_scaled(m: &Matrix, tol: f64, scale: f64) -> SubspaceBasis {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return SubspaceBasis::zero(0);
    }
    if rows == 0 {
        return SubspaceBasis::full(cols);
    }
    let svd = full_svd(m);
    let c = cutoff(tol, scale);
    let r = svd.s.iter().filter(|&&v| v > c).count();
    SubspaceBasis {
        ambient_dim: cols,
        basis: svd.v.columns(r, cols - r).into_owned(),
    }
}

/// Orthonormal basis of the column space of `m`.
pub fn image_basis(m: &Matrix, tol: f64) -> Result<SubspaceBasis> {
    ensure_tol(tol)?;
    ensure_finite(m, "matrix")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(SubspaceBasis::zero(rows));
    }
    let svd = full_svd(m);
    let c = cutoff(tol, svd.s[0]);
    let r = svd.s.iter().filter(|&&v| v > c).count();
    Ok(SubspaceBasis {
        ambient_dim: rows,
        basis: svd.u.columns(0, r).into_owned(),
    })
}

/// True iff no nonzero element of `u` lies in the kernel of `map`.
pub fn trivial_intersection(u: &SubspaceBasis, map: &Matrix, tol: f64) -> Result<bool> {
    if map.ncols() != u.ambient_dim {
        return Err(Error::dims(format!(
            "trivial_intersection: map has {} columns, subspace lives in R^{}",
            map.ncols(),
            u.ambient_dim
        )));
    }
    if u.dim() == 0 {
        return Ok(true);
    }
    Ok(rank_tol(&(map * &u.basis), tol)? == u.dim())
}

/// Symmetric eigendecomposition, eigenvalues ascending.
///
/// Each eigenvector is signed so that its largest-magnitude entry (first on ties)
/// is positive.
pub fn eig_sym(l: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !l.is_square() {
        return Err(Error::dims(format!("eig_sym: {}x{} not square", l.nrows(), l.ncols())));
    }
    ensure_finite(l, "matrix")?;
    let n = l.nrows();
    if n == 0 {
        return Ok((Vec::new(), Matrix::zeros(0, 0)));
    }
    let asym = (l - l.transpose()).amax();
    if asym > TOL_SYM * l.amax().max(1.0) {
        return Err(Error::invalid(format!("eig_sym: asymmetry {asym:.3e}")));
    }
    let sym = (l + l.transpose()) * 0.5;
    let (w, vecs) = lapack::eigh(&sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(a.cmp(&b)));
    let mut vals = Vec::with_capacity(n);
    let mut u = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vals.push(w[src]);
        let mut col = vecs.column(src).into_owned();
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() + 1e-12 {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col = -col;
        }
        u.column_mut(dst).copy_from(&col);
    }
    Ok((vals, u))
}

/// `e^{a t}` by scaling and squaring with a Pade approximant.
pub fn matrix_exp(a: &Matrix, t: f64) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::dims(format!("matrix_exp: {}x{} not square", a.nrows(), a.ncols())));
    }
    ensure_finite(a, "matrix")?;
    if a.nrows() == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    Ok((a * t).exp())
}

/// Moore-Penrose pseudoinverse with relative cutoff `tol`.
pub fn pinv(m: &Matrix, tol: f64) -> Result<Matrix> {
    ensure_tol(tol)?;
    ensure_finite(m, "matrix")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(Matrix::zeros(cols, rows));
    }
    let svd = full_svd(m);
    let c = cutoff(tol, svd.s[0]);
    let mut out = Matrix::zeros(cols, rows);
    for (k, &s) in svd.s.iter().enumerate() {
        if s > c {
            out += svd.v.column(k) * svd.u.column(k).transpose() / s;
        }
    }
    Ok(out)
}

/// Least-squares solution of `m x = rhs` through the pseudoinverse.
pub fn lstsq(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    if m.nrows() != rhs.nrows() {
        return Err(Error::dims("lstsq: row counts differ"));
    }
    Ok(pinv(m, TOL_REL)? * rhs)
}

/// Solves `a^T p + p a = -q`.
pub fn lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(Error::dims("lyapunov: shapes"));
    }
    let id = Matrix::identity(n, n);
    let op = id.kronecker(&a.transpose()) + a.transpose().kronecker(&id);
    let rhs = -Vector::from_column_slice(q.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("lyapunov: singular operator".into()))?;
    let p = Matrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Stabilizing solution of the filter Riccati equation
/// `a x + x a^T - x c^T c x + q = 0`, via the matrix sign function.
pub fn care_filter(a: &Matrix, c: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if !a.is_square() || c.ncols() != n || q.shape() != (n, n) {
        return Err(Error::dims("care_filter: shapes"));
    }
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let g = c.transpose() * c;
    let mut h = Matrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&a.transpose());
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a));

    let mut z = h;
    let dim = (2 * n) as f64;
    let mut converged = false;
    for _ in 0..100 {
        let lu = z.clone().lu();
        let log_det: f64 = lu.u().diagonal().iter().map(|d| d.abs().ln()).sum();
        if !log_det.is_finite() {
            return Err(Error::Numerical("care_filter: Hamiltonian has eigenvalues on the imaginary axis".into()));
        }
        let zinv = lu
            .try_inverse()
            .ok_or_else(|| Error::Numerical("care_filter: singular iterate".into()))?;
        let scale = (-log_det / dim).exp();
        let next = (&z * scale + zinv / scale) * 0.5;
        let delta = (&next - &z).norm() / next.norm().max(1.0);
        z = next;
        if delta < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("care_filter: sign iteration did not converge".into()));
    }
    let w11 = z.view((0, 0), (n, n)).into_owned();
    let w12 = z.view((0, n), (n, n)).into_owned();
    let w21 = z.view((n, 0), (n, n)).into_owned();
    let w22 = z.view((n, n), (n, n)).into_owned();
    let id = Matrix::identity(n, n);
    let mut lhs = Matrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w12);
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w22 + &id));
    let mut rhs = Matrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w11 + &id)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w21));
    let x = lstsq(&lhs, &rhs)?;
    let x = (&x + x.transpose()) * 0.5;
    ensure_finite(&x, "riccati solution")?;
    Ok(x)
}

/// Eigenvalues of a general real matrix, sorted by real part descending, then
/// imaginary part descending.
pub fn eigenvalues(a: &Matrix) -> Vec<Complex<f64>> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut ev = lapack::eigvals(a);
    ev.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    ev
}

/// Largest real part among the eigenvalues (negative infinity if empty).
pub fn spectral_abscissa(a: &Matrix) -> f64 {
    eigenvalues(a)
        .first()
        .map(|z| z.re)
        .unwrap_or(f64::NEG_INFINITY)
}

/// A zeroing direction of `(A, B, C, D)`.
#[derive(Debug, Clone)]
pub struct ZeroDirection {
    pub lambda0: Complex<f64>,
    pub x0: CVector,
    pub u0: CVector,
    pub residual: f64,
}

impl ZeroDirection {
    pub fn is_real(&self) -> bool {
        self.lambda0.im.abs() <= 1e-9 * self.lambda0.norm().max(1.0)
    }
}

fn to_complex(m: &Matrix) -> CMatrix {
    m.map(|v| Complex::new(v, 0.0))
}

/// Norm of `[lambda I - A, -B; C, D] [x; u]`.
pub fn rosenbrock_residual(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    d: &Matrix,
    lambda: Complex<f64>,
    x: &CVector,
    u: &CVector,
) -> f64 {
    let top = x * lambda - to_complex(a) * x - to_complex(b) * u;
    let bottom = to_complex(c) * x + to_complex(d) * u;
    (top.norm_squared() + bottom.norm_squared()).sqrt()
}

/// Smallest singular value of the Rosenbrock matrix at `lambda`.
pub fn rosenbrock_sigma_min(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix, lambda: Complex<f64>) -> f64 {
    let n = a.nrows();
    let m = b.ncols();
    let p = c.nrows();
    let mut r = CMatrix::zeros(n + p, n + m);
    let li = CMatrix::identity(n, n) * lambda;
    r.view_mut((0, 0), (n, n)).copy_from(&(li - to_complex(a)));
    r.view_mut((0, n), (n, m)).copy_from(&(-to_complex(b)));
    r.view_mut((n, 0), (p, n)).copy_from(&to_complex(c));
    r.view_mut((n, n), (p, m)).copy_from(&to_complex(d));
    if r.nrows() < r.ncols() {
        return 0.0;
    }
    lapack::singular_values_c(&r).into_iter().fold(f64::INFINITY, f64::min)
}

/// Largest subspace `V` with `C V = 0` and `A V ⊆ V + Im B`.
///
/// With `b` empty this is the unobservable subspace of `(A, C)`.
pub fn maximal_output_nulling(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<SubspaceBasis> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || c.ncols() != n {
        return Err(Error::dims("maximal_output_nulling: shapes"));
    }
    ensure_finite(a, "A")?;
    ensure_finite(b, "B")?;
    ensure_finite(c, "C")?;
    let mut stacked = Matrix::zeros(c.nrows() + n, n);
    stacked.rows_mut(0, c.nrows()).copy_from(c);
    stacked.rows_mut(c.nrows(), n).copy_from(a);
    let scale = norm2(&stacked).max(norm2(b));
    let mut v = nullspace_scaled(c, TOL_REL, scale).basis;
    loop {
        let k = v.ncols();
        if k == 0 {
            break;
        }
        let mut vb = Matrix::zeros(n, k + b.ncols());
        vb.columns_mut(0, k).copy_from(&v);
        vb.columns_mut(k, b.ncols()).copy_from(b);
        let s = image_basis(&vb, TOL_REL)?.basis;
        let proj = Matrix::identity(n, n) - &s * s.transpose();
        let mut m = Matrix::zeros(c.nrows() + n, k);
        m.rows_mut(0, c.nrows()).copy_from(&(c * &v));
        m.rows_mut(c.nrows(), n).copy_from(&(&proj * a * &v));
        let w = nullspace_scaled(&m, TOL_REL, scale).basis;
        let next = SubspaceBasis::span_of(&(&v * &w)).basis;
        if next.ncols() == k {
            break;
        }
        v = next;
    }
    Ok(SubspaceBasis {
        ambient_dim: n,
        basis: v,
    })
}

/// Complex null vectors of `m` (square or tall) at the given cutoff; at least one.
fn complex_null_vectors(m: &CMatrix, max_count: usize, cut: f64) -> Vec<CVector> {
    let (rows, cols) = m.shape();
    let work = if rows < cols {
        let mut p = CMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let (mut sv, v) = lapack::svd_c(&work);
    sv.resize(v.ncols(), 0.0);
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]).then(a.cmp(&b)));
    let mut out = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if rank >= max_count || (rank > 0 && sv[i] > cut) {
            break;
        }
        out.push(v.column(i).into_owned());
    }
    out
}

/// Rotates `(x, u)` so its largest entry is real and positive, and normalizes it.
fn normalize_direction(x: &mut CVector, u: &mut CVector) {
    let norm = (x.norm_squared() + u.norm_squared()).sqrt();
    let mut pivot = Complex::new(0.0, 0.0);
    for z in x.iter().chain(u.iter()) {
        if z.norm() > pivot.norm() * (1.0 + 1e-9) {
            pivot = *z;
        }
    }
    let phase = if pivot.norm() > 0.0 {
        pivot.conj() / pivot.norm()
    } else {
        Complex::new(1.0, 0.0)
    };
    let f = phase / norm;
    *x *= f;
    *u *= f;
}

/// Finite invariant zeros of `(A, B, C, D)` with normalized zeroing directions.
///
/// Zeros are the eigenvalues of `A + B F` restricted to the maximal
/// output-nulling subspace. Degenerate systems (zeros filling the plane) are
/// rejected.
pub fn invariant_zeros(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix) -> Result<Vec<ZeroDirection>> {
    let n = a.nrows();
    let m = b.ncols();
    let p = c.nrows();
    if !a.is_square() || b.nrows() != n || c.ncols() != n || d.shape() != (p, m) {
        return Err(Error::dims(format!(
            "invariant_zeros: A {}x{}, B {}x{}, C {}x{}, D {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            c.nrows(),
            c.ncols(),
            d.nrows(),
            d.ncols()
        )));
    }
    ensure_finite(d, "D")?;
    if n + p < n + m {
        return Err(Error::UnsupportedDegenerate(format!(
            "pencil is wide ({} outputs < {} inputs)",
            p, m
        )));
    }

    // A feedthrough is absorbed by integrating the input: the augmented system
    // has the same zeros, with the original input appearing as a state.
    let has_d = d.iter().any(|&v| v != 0.0);
    let (aa, bb, cc) = if has_d {
        let mut aa = Matrix::zeros(n + m, n + m);
        aa.view_mut((0, 0), (n, n)).copy_from(a);
        aa.view_mut((0, n), (n, m)).copy_from(b);
        let mut bb = Matrix::zeros(n + m, m);
        bb.view_mut((n, 0), (m, m)).copy_from(&Matrix::identity(m, m));
        let mut cc = Matrix::zeros(p, n + m);
        cc.view_mut((0, 0), (p, n)).copy_from(c);
        cc.view_mut((0, n), (p, m)).copy_from(d);
        (aa, bb, cc)
    } else {
        (a.clone(), b.clone(), c.clone())
    };
    let na = aa.nrows();
    let v = maximal_output_nulling(&aa, &bb, &cc)?.basis;
    let k = v.ncols();

    let mut vb = Matrix::zeros(na, k + m);
    vb.columns_mut(0, k).copy_from(&v);
    vb.columns_mut(k, m).copy_from(&bb);
    if k + m > 0 && rank_tol(&vb, TOL_REL)? < k + m {
        return Err(Error::UnsupportedDegenerate(
            "input directions reach the output-nulling subspace (normal rank deficient)".into(),
        ));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    // A V = V R + B G on the output-nulling subspace.
    let sol = lstsq(&vb, &(&aa * &v))?;
    let r = sol.rows(0, k).into_owned();
    let g = sol.rows(k, m).into_owned();
    let fit = (&aa * &v - &v * &r - &bb * &g).amax();
    if fit > 1e-8 * norm2(&aa).max(1.0) {
        return Err(Error::Numerical(format!(
            "output-nulling subspace is not invariant (fit error {fit:.3e})"
        )));
    }

    let ev = eigenvalues(&r);
    let rc = to_complex(&r);
    let vc = to_complex(&v);
    let gc = to_complex(&g);
    let scale = norm2(&r).max(1.0);
    let mut out: Vec<ZeroDirection> = Vec::new();
    let mut i = 0;
    while i < ev.len() {
        let mut j = i + 1;
        while j < ev.len() && (ev[j] - ev[i]).norm() <= 1e-6 * scale {
            j += 1;
        }
        let mult = j - i;
        let lambda = ev[i..j].iter().sum::<Complex<f64>>() / mult as f64;
        let shifted = &rc - CMatrix::identity(k, k) * lambda;
        for w in complex_null_vectors(&shifted, mult, 1e-7 * scale) {
            let full_x = &vc * &w;
            let full_u = -(&gc * &w);
            let (mut x0, mut u0) = if has_d {
                (full_x.rows(0, n).into_owned(), full_x.rows(n, m).into_owned())
            } else {
                (full_x, full_u)
            };
            if x0.norm_squared() + u0.norm_squared() == 0.0 {
                continue;
            }
            normalize_direction(&mut x0, &mut u0);
            let residual = rosenbrock_residual(a, b, c, d, lambda, &x0, &u0);
            if residual > TOL_ZERO {
                return Err(Error::Numerical(format!(
                    "zero {lambda} has residual {residual:.3e} above {TOL_ZERO:e}"
                )));
            }
            out.push(ZeroDirection {
                lambda0: lambda,
                x0,
                u0,
                residual,
            });
        }
        i = j;
    }
    Ok(out)
}

/// Formats a float with the shortest round-trip representation.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e-4 && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Writes `m` as CSV: a `rows,cols` header, the dimensions, then one record per row.
pub fn write_matrix_csv<W: Write>(m: &Matrix, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let io = |e: csv::Error| Error::Numerical(format!("csv write: {e}"));
    w.write_record(["rows", "cols"]).map_err(io)?;
    w.write_record([m.nrows().to_string(), m.ncols().to_string()])
        .map_err(io)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|&v| fmt_f64(v)))
            .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Numerical(format!("csv flush: {e}")))?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv<R: Read>(input: R) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(input);
    let bad = |msg: String| Error::parse("matrix.csv", msg);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["rows", "cols"] {
        return Err(bad("expected header `rows,cols`".into()));
    }
    let mut records = rdr.records();
    let dims = records
        .next()
        .ok_or_else(|| bad("missing dimension record".into()))?
        .map_err(|e| bad(e.to_string()))?;
    let parse_dim = |s: Option<&str>| -> Result<usize> {
        s.and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("bad dimension".into()))
    };
    let rows = parse_dim(dims.get(0))?;
    let cols = parse_dim(dims.get(1))?;
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let rec = records
            .next()
            .ok_or_else(|| bad(format!("missing row {}", i + 1)))?
            .map_err(|e| bad(e.to_string()))?;
        if rec.len() != cols {
            return Err(bad(format!("row {} has {} fields, expected {cols}", i + 1, rec.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            m[(i, j)] = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("row {} col {}: `{field}`", i + 1, j + 1)))?;
        }
    }
    if records.next().is_some() {
        return Err(bad("trailing records".into()));
    }
    ensure_finite(&m, "matrix")?;
    Ok(m)
}
