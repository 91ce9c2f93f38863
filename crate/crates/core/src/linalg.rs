//! Dense complex linear algebra on small matrices.
//!
//! Everything here is deterministic for a fixed input. Eigenvectors inside a
//! degenerate eigenspace are canonicalized: the eigenspace projector is applied
//! to the standard basis vectors in ascending index order, the images are
//! Gram-Schmidt orthonormalized, and every vector gets its phase fixed so that
//! its largest-magnitude entry is real and positive.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Largest global Hilbert-space dimension any operation will build.
pub const DIM_CAP: usize = 1 << 20;

// Relative gap under which sorted eigenvalues are treated as one cluster.
const DEGENERACY_GAP: f64 = 1e-10;
// Minimum norm of a projected basis vector admitted into a canonical basis.
const CANON_PICK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("dimension {0} exceeds the cap of {1}")]
    OverflowDim(usize, usize),
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("matrix is not positive semidefinite (eigenvalue {0:.3e})")]
    NotPSD(f64),
    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub(crate) fn scale_of(x: f64) -> f64 {
    x.max(1.0)
}

/// Numerical tolerances plus the seed for every randomized choice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    /// Relative Frobenius tolerance for operator equality.
    pub eps_eq: f64,
    /// Cutoff for rank and kernel decisions.
    pub eps_rank: f64,
    pub seed: u64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            eps_eq: 1e-8,
            eps_rank: 1e-9,
            seed: 0,
        }
    }
}

impl Tolerance {
    pub fn new(eps_eq: f64, eps_rank: f64, seed: u64) -> Result<Self> {
        let t = Tolerance {
            eps_eq,
            eps_rank,
            seed,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_rank > 0.0 && self.eps_rank <= self.eps_eq && self.eps_eq < 1e-3) {
            return Err(LinalgError::InvalidTolerance(format!(
                "need 0 < eps_rank <= eps_eq < 1e-3, got eps_eq={} eps_rank={}",
                self.eps_eq, self.eps_rank
            )));
        }
        Ok(())
    }

    /// Same tolerances, different seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Tolerance { seed, ..*self }
    }
}

/// Dense square complex matrix, optionally tagged with the qudits it acts on.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    mat: CMat,
    support: Vec<usize>,
}

impl Operator {
    pub fn from_matrix(mat: CMat) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(LinalgError::BadShape(format!(
                "operator must be square and non-empty, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(Operator {
            mat,
            support: Vec::new(),
        })
    }

    /// Build from row-major entries.
    pub fn from_row_major(dim: usize, entries: &[C64]) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(LinalgError::BadShape(format!(
                "expected {} entries for dim {}, got {}",
                dim * dim,
                dim,
                entries.len()
            )));
        }
        Ok(Operator {
            mat: CMat::from_row_slice(dim, dim, entries),
            support: Vec::new(),
        })
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Operator {
            mat: CMat::from_fn(dim, dim, f),
            support: Vec::new(),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Operator {
            mat: CMat::zeros(dim, dim),
            support: Vec::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Operator {
            mat: CMat::identity(dim, dim),
            support: Vec::new(),
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Operator::from_fn(n, |i, j| if i == j { c(values[i], 0.0) } else { C64::default() })
    }

    pub fn with_support(mut self, support: Vec<usize>) -> Self {
        self.support = support;
        self
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn into_matrix(self) -> CMat {
        self.mat
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.mat[(i, j)]
    }

    pub fn row_major(&self) -> Vec<C64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.mat[(i, j)]);
            }
        }
        out
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            mat: self.mat.adjoint(),
            support: self.support.clone(),
        }
    }

    pub fn mul(&self, other: &Operator) -> Operator {
        Operator {
            mat: &self.mat * &other.mat,
            support: self.support.clone(),
        }
    }

    pub fn add(&self, other: &Operator) -> Operator {
        Operator {
            mat: &self.mat + &other.mat,
            support: self.support.clone(),
        }
    }

    pub fn sub(&self, other: &Operator) -> Operator {
        Operator {
            mat: &self.mat - &other.mat,
            support: self.support.clone(),
        }
    }

    pub fn scale(&self, s: C64) -> Operator {
        Operator {
            mat: &self.mat * s,
            support: self.support.clone(),
        }
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.norm()
    }

    pub fn commutator(&self, other: &Operator) -> Operator {
        Operator {
            mat: &self.mat * &other.mat - &other.mat * &self.mat,
            support: self.support.clone(),
        }
    }

    /// max |m_ij - conj(m_ji)|
    pub fn hermitian_deviation(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.mat[(i, j)] - self.mat[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: &Tolerance) -> bool {
        self.hermitian_deviation() <= tol.eps_eq * scale_of(self.frobenius_norm())
    }

    pub fn is_projection(&self, tol: &Tolerance) -> bool {
        if !self.is_hermitian(tol) {
            return false;
        }
        let sq = &self.mat * &self.mat;
        (sq - &self.mat).norm() <= tol.eps_eq * scale_of(self.frobenius_norm())
    }

    /// Relative Frobenius equality: ||a - b|| <= eps * max(1, ||a||, ||b||).
    pub fn approx_eq(&self, other: &Operator, eps: f64) -> bool {
        if self.dim() != other.dim() {
            return false;
        }
        let s = scale_of(self.frobenius_norm().max(other.frobenius_norm()));
        (&self.mat - &other.mat).norm() <= eps * s
    }

    /// Hermitian part (m + m†)/2, used to scrub rounding noise.
    pub fn hermitized(&self) -> Operator {
        Operator {
            mat: (&self.mat + self.mat.adjoint()) * c(0.5, 0.0),
            support: self.support.clone(),
        }
    }
}

/// Kronecker product; the support is the concatenation of both supports.
pub fn tensor(a: &Operator, b: &Operator) -> Result<Operator> {
    let dim = a
        .dim()
        .checked_mul(b.dim())
        .filter(|d| *d <= DIM_CAP)
        .ok_or(LinalgError::OverflowDim(a.dim().saturating_mul(b.dim()), DIM_CAP))?;
    debug_assert!(dim > 0);
    let mut support = a.support.clone();
    support.extend_from_slice(&b.support);
    Ok(Operator {
        mat: a.mat.kronecker(&b.mat),
        support,
    })
}

pub fn tensor_all(ops: &[Operator]) -> Result<Operator> {
    let mut acc = Operator::identity(1);
    for op in ops {
        acc = tensor(&acc, op)?;
    }
    Ok(acc)
}

/// Row-major strides for a tensor product with the first factor most significant.
pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Trace out every qudit not in `keep`. Qudit ids refer to `m.support()`, or to
/// positions `0..dims.len()` when the support is empty. `dims` follows the
/// support order.
pub fn partial_trace(m: &Operator, keep: &[usize], dims: &[usize]) -> Result<Operator> {
    let total: usize = dims.iter().product();
    if total != m.dim() {
        return Err(LinalgError::BadShape(format!(
            "dims multiply to {total} but operator has dim {}",
            m.dim()
        )));
    }
    let ids: Vec<usize> = if m.support.is_empty() {
        (0..dims.len()).collect()
    } else {
        if m.support.len() != dims.len() {
            return Err(LinalgError::BadShape(format!(
                "support has {} qudits but {} dims given",
                m.support.len(),
                dims.len()
            )));
        }
        m.support.clone()
    };
    let kept_pos: Vec<usize> = (0..ids.len()).filter(|&p| keep.contains(&ids[p])).collect();
    let traced_pos: Vec<usize> = (0..ids.len()).filter(|&p| !keep.contains(&ids[p])).collect();
    let kd: Vec<usize> = kept_pos.iter().map(|&p| dims[p]).collect();
    let td: Vec<usize> = traced_pos.iter().map(|&p| dims[p]).collect();
    let kdim: usize = kd.iter().product();
    let tdim: usize = td.iter().product();
    let full_strides = strides(dims);
    let offset = |kidx: usize, tidx: usize| -> usize {
        let mut idx = 0;
        let mut r = kidx;
        for (n, &p) in kept_pos.iter().enumerate().rev() {
            idx += (r % kd[n]) * full_strides[p];
            r /= kd[n];
        }
        let mut r = tidx;
        for (n, &p) in traced_pos.iter().enumerate().rev() {
            idx += (r % td[n]) * full_strides[p];
            r /= td[n];
        }
        idx
    };
    let mut out = CMat::zeros(kdim, kdim);
    for t in 0..tdim {
        for a in 0..kdim {
            let ra = offset(a, t);
            for b in 0..kdim {
                out[(a, b)] += m.mat[(ra, offset(b, t))];
            }
        }
    }
    let support = kept_pos.iter().map(|&p| ids[p]).collect::<Vec<_>>();
    let support = if m.support.is_empty() { Vec::new() } else { support };
    Ok(Operator { mat: out, support })
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues, unitary
/// eigenvector matrix (columns).
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl Eigen {
    /// Projector onto the span of the eigenvectors whose eigenvalue passes `keep`.
    pub fn projector(&self, mut keep: impl FnMut(f64) -> bool) -> CMat {
        let n = self.vectors.nrows();
        let mut p = CMat::zeros(n, n);
        for (k, &v) in self.values.iter().enumerate() {
            if keep(v) {
                let col = self.vectors.column(k);
                p += col * col.adjoint();
            }
        }
        p
    }

    /// Eigenvectors whose eigenvalue passes `keep`, as columns.
    pub fn columns(&self, mut keep: impl FnMut(f64) -> bool) -> CMat {
        let idx: Vec<usize> = (0..self.values.len()).filter(|&k| keep(self.values[k])).collect();
        let n = self.vectors.nrows();
        CMat::from_fn(n, idx.len(), |i, j| self.vectors[(i, idx[j])])
    }

    /// Groups of indices whose eigenvalues differ by at most `gap` consecutively.
    pub fn clusters(&self, gap: f64) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = Vec::new();
        for (k, &v) in self.values.iter().enumerate() {
            match out.last_mut() {
                Some(last) if (v - self.values[*last.last().unwrap()]).abs() <= gap => last.push(k),
                _ => out.push(vec![k]),
            }
        }
        out
    }

    pub fn spectral_radius(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Hermitian eigendecomposition with canonical eigenvectors.
pub fn hermitian_eig(m: &Operator, tol: &Tolerance) -> Result<Eigen> {
    if !m.is_hermitian(tol) {
        return Err(LinalgError::NotHermitian(m.hermitian_deviation()));
    }
    Ok(eig_hermitian_matrix(&m.mat))
}

/// Same as [`hermitian_eig`] on a raw matrix, which is hermitized first.
pub fn eig_hermitian_matrix(m: &CMat) -> Eigen {
    let n = m.nrows();
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    if n == 1 {
        return Eigen {
            values: vec![h[(0, 0)].re],
            vectors: CMat::identity(1, 1),
        };
    }
    let se = nalgebra::SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&k| se.eigenvalues[k]).collect();
    let mut vectors = CMat::from_fn(n, n, |i, j| se.eigenvectors[(i, order[j])]);

    let radius = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let gap = DEGENERACY_GAP * scale_of(radius);
    let mut eig = Eigen {
        values,
        vectors: vectors.clone(),
    };
    for cluster in eig.clusters(gap) {
        if cluster.len() == 1 {
            let mut v = vectors.column(cluster[0]).into_owned();
            fix_phase(&mut v);
            vectors.set_column(cluster[0], &v);
            continue;
        }
        let q = CMat::from_fn(n, cluster.len(), |i, j| vectors[(i, cluster[j])]);
        let basis = canonical_basis(&q);
        for (slot, v) in cluster.iter().zip(basis) {
            vectors.set_column(*slot, &v);
        }
    }
    eig.vectors = vectors;
    eig
}

/// Canonical orthonormal basis of the column span of `q` (orthonormal columns).
pub fn canonical_basis(q: &CMat) -> Vec<CVec> {
    let n = q.nrows();
    let k = q.ncols();
    let mut basis: Vec<CVec> = Vec::with_capacity(k);
    for i in 0..n {
        if basis.len() == k {
            break;
        }
        // P e_i = Q (Q† e_i) = Q * conj(row i of Q)ᵀ
        let coeffs = CVec::from_fn(k, |j, _| q[(i, j)].conj());
        let mut v = q * coeffs;
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dotc(&v);
                v -= b * proj;
            }
        }
        let nv = v.norm();
        if nv > CANON_PICK {
            v /= c(nv, 0.0);
            fix_phase(&mut v);
            basis.push(v);
        }
    }
    // Numerically pathological spans fall back to the raw columns.
    if basis.len() < k {
        basis = gram_schmidt_columns(q);
    }
    basis
}

fn gram_schmidt_columns(q: &CMat) -> Vec<CVec> {
    let mut basis: Vec<CVec> = Vec::new();
    for j in 0..q.ncols() {
        let mut v = q.column(j).into_owned();
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dotc(&v);
                v -= b * proj;
            }
        }
        let nv = v.norm();
        if nv > 1e-12 {
            v /= c(nv, 0.0);
            fix_phase(&mut v);
            basis.push(v);
        }
    }
    basis
}

/// Rotate the global phase so the largest-magnitude entry is real positive.
/// Ties go to the lowest index.
pub fn fix_phase(v: &mut CVec) {
    let max = v.iter().fold(0.0f64, |a, x| a.max(x.norm()));
    if max == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .position(|x| x.norm() >= max * (1.0 - 1e-9))
        .unwrap_or(0);
    let ph = v[pivot] / c(v[pivot].norm(), 0.0);
    *v *= ph.conj();
    v[pivot] = c(v[pivot].re, 0.0);
}

/// Projector onto the numerical kernel of a PSD Hermitian matrix.
pub fn kernel_projector(m: &Operator, tol: &Tolerance) -> Result<Operator> {
    let eig = hermitian_eig(m, tol)?;
    let cut = tol.eps_rank * eig.spectral_radius();
    if let Some(&lo) = eig.values.first() {
        if lo < -cut {
            return Err(LinalgError::NotPSD(lo));
        }
    }
    let p = eig.projector(|v| v.abs() <= cut);
    Ok(Operator {
        mat: p,
        support: m.support.clone(),
    })
}

/// Orthonormal basis (as columns) of the range of a projector-like Hermitian matrix.
pub fn range_isometry(p: &CMat) -> CMat {
    let eig = eig_hermitian_matrix(p);
    eig.columns(|v| v > 0.5)
}

/// Kronecker product of raw matrices, left to right.
pub fn kron_all(ms: &[CMat]) -> CMat {
    let mut out = CMat::identity(1, 1);
    for m in ms {
        out = out.kronecker(m);
    }
    out
}

/// Canonical orthonormal basis of the range of a projector, as columns.
/// Depends only on the projector, so provers and verifiers agree on it.
pub fn canonical_isometry(p: &CMat) -> CMat {
    let basis = canonical_basis(&range_isometry(p));
    let n = p.nrows();
    CMat::from_fn(n, basis.len(), |i, j| basis[j][i])
}

// nalgebra's complex SVD can return wrong factors for rank-deficient input,
// so singular value work goes through a Householder QR and the Hermitian
// eigenproblem of [[0, R], [R†, 0]], whose spectrum is ±σ.

// Square k×k factor with the singular values (and right vectors) of `m`,
// plus the map taking its left vectors back. For rows < cols the matrix is
// zero-padded, which keeps ker m and adds zero singular values.
fn square_factor(m: &CMat) -> (CMat, Option<CMat>) {
    let (r, n) = m.shape();
    if r > n {
        let qr = m.clone().qr();
        (qr.r(), Some(qr.q()))
    } else if r < n {
        let mut p = CMat::zeros(n, n);
        p.view_mut((0, 0), (r, n)).copy_from(m);
        (p, None)
    } else {
        (m.clone(), None)
    }
}

fn jordan_wielandt(r: &CMat) -> nalgebra::SymmetricEigen<C64, nalgebra::Dyn> {
    let k = r.nrows();
    let mut b = CMat::zeros(2 * k, 2 * k);
    b.view_mut((0, k), (k, k)).copy_from(r);
    b.view_mut((k, 0), (k, k)).copy_from(&r.adjoint());
    nalgebra::SymmetricEigen::new(b)
}

/// Singular triples of `m` in descending order: (σ, left vectors, right
/// vectors). Only the first min(rows, cols) triples are returned; vectors
/// paired with numerically zero σ are not meaningful.
pub fn thin_svd(m: &CMat) -> (Vec<f64>, Vec<CVec>, Vec<CVec>) {
    let (r, n) = m.shape();
    if r == 0 || n == 0 {
        return (Vec::new(), Vec::new(), Vec::new());
    }
    if r < n {
        let (s, u, v) = thin_svd(&m.adjoint());
        return (s, v, u);
    }
    let (sq, q) = square_factor(m);
    let k = sq.nrows();
    let eig = jordan_wielandt(&sq);
    let mut order: Vec<usize> = (0..2 * k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut sig = Vec::with_capacity(k);
    let mut us = Vec::with_capacity(k);
    let mut vs = Vec::with_capacity(k);
    for &j in order.iter().take(k) {
        let col = eig.eigenvectors.column(j);
        let mut u: CVec = col.rows(0, k).into_owned();
        let mut v: CVec = col.rows(k, k).into_owned();
        let (nu, nv) = (u.norm(), v.norm());
        if nu > 0.0 {
            u /= c(nu, 0.0);
        }
        if nv > 0.0 {
            v /= c(nv, 0.0);
        }
        if let Some(q) = &q {
            u = q * u;
        }
        sig.push(eig.eigenvalues[j].max(0.0));
        us.push(u);
        vs.push(v);
    }
    (sig, us, vs)
}

/// Singular values in descending order.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    thin_svd(m).0
}

/// Numerical rank with a relative cutoff.
pub fn rank(m: &CMat, rel: f64) -> usize {
    let s = singular_values(m);
    let top = s.first().copied().unwrap_or(0.0);
    if top <= rel {
        return 0;
    }
    s.iter().filter(|&&x| x > rel * scale_of(top)).count()
}

/// Largest singular triple (sigma, u, v) with m ≈ sigma u v†.
pub fn top_singular_triple(m: &CMat) -> (f64, CVec, CVec) {
    let (s, u, v) = thin_svd(m);
    (s[0], u[0].clone(), v[0].clone())
}

/// Orthonormal basis of the column space of `m`, keeping directions with
/// σ > rel · σ_max, largest σ first.
pub fn column_space(m: &CMat, rel: f64) -> Vec<CVec> {
    let (s, u, _) = thin_svd(m);
    let top = s.first().copied().unwrap_or(0.0);
    if top <= 1e-14 {
        return Vec::new();
    }
    s.iter().zip(u).filter(|(&x, _)| x > rel * top).map(|(_, u)| u).collect()
}

/// Orthonormal basis of {x : m x = 0}, with singular values up to `rel * sigma_max`
/// counted as zero.
pub fn null_space(m: &CMat, rel: f64) -> Vec<CVec> {
    let n = m.ncols();
    if n == 0 {
        return Vec::new();
    }
    if m.nrows() == 0 {
        return (0..n).map(|i| CVec::from_fn(n, |j, _| c(f64::from(u8::from(i == j)), 0.0))).collect();
    }
    let (sq, _) = square_factor(m);
    let eig = jordan_wielandt(&sq);
    let top = eig.eigenvalues.iter().fold(0.0f64, |x, y| x.max(y.abs()));
    let cut = rel * scale_of(top);
    // Inside the |λ| ≤ cut eigenspace the lower halves of the eigenvectors
    // sum (as projectors) to the projector onto the numerical kernel.
    let mut p = CMat::zeros(n, n);
    for j in 0..2 * n {
        if eig.eigenvalues[j].abs() <= cut {
            let v: CVec = eig.eigenvectors.column(j).rows(n, n).into_owned();
            p += &v * v.adjoint();
        }
    }
    let e = eig_hermitian_matrix(&p);
    (0..n).filter(|&k| e.values[k] > 0.5).map(|k| e.vectors.column(k).into_owned()).collect()
}

/// Incrementally built orthonormal set of vectors.
#[derive(Clone, Debug, Default)]
pub struct Span {
    basis: Vec<CVec>,
}

impl Span {
    pub fn new() -> Self {
        Span { basis: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn basis(&self) -> &[CVec] {
        &self.basis
    }

    /// Component of `v` orthogonal to the span.
    pub fn residual(&self, v: &CVec) -> CVec {
        let mut r = v.clone();
        for _ in 0..2 {
            for b in &self.basis {
                let proj = b.dotc(&r);
                r -= b * proj;
            }
        }
        r
    }

    /// Relative distance of `v` from the span (0 when inside).
    pub fn distance(&self, v: &CVec) -> f64 {
        let nv = v.norm();
        if nv == 0.0 {
            return 0.0;
        }
        self.residual(v).norm() / nv
    }

    /// Add `v` if it sticks out of the span by more than `rel` (relative).
    pub fn try_push(&mut self, v: &CVec, rel: f64) -> bool {
        let nv = v.norm();
        if nv <= 1e-300 {
            return false;
        }
        let r = self.residual(v);
        let nr = r.norm();
        if nr <= rel * nv {
            return false;
        }
        self.basis.push(r / c(nr, 0.0));
        true
    }

    /// Add `v` if its residual norm exceeds `abs`.
    pub fn try_push_abs(&mut self, v: &CVec, abs: f64) -> bool {
        let r = self.residual(v);
        let nr = r.norm();
        if nr <= abs {
            return false;
        }
        self.basis.push(r / c(nr, 0.0));
        true
    }
}

/// Column-major flattening of a square matrix, for Hilbert-Schmidt geometry.
pub fn vectorize(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &CVec, dim: usize) -> CMat {
    CMat::from_column_slice(dim, dim, v.as_slice())
}

/// Hilbert-Schmidt inner product tr(a† b).
pub fn hs_inner(a: &CMat, b: &CMat) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn pauli_x() -> Operator {
    Operator::from_row_major(2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]).unwrap()
}

pub fn pauli_y() -> Operator {
    Operator::from_row_major(2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]).unwrap()
}

pub fn pauli_z() -> Operator {
    Operator::diag(&[1.0, -1.0])
}

/// Left-multiply by `I ⊗ a ⊗ I` where `a` acts on tensor position `pos` of the
/// row space. `a` may be rectangular; the result has `dims[pos]` replaced by
/// `a.nrows()` in its row space.
pub fn apply_local_left(m: &CMat, dims: &[usize], pos: usize, a: &CMat) -> CMat {
    let din = dims[pos];
    assert_eq!(a.ncols(), din, "local operator does not match the factor dimension");
    let hi: usize = dims[..pos].iter().product();
    let lo: usize = dims[pos + 1..].iter().product();
    assert_eq!(hi * din * lo, m.nrows(), "row space does not match dims");
    let dout = a.nrows();
    let cols = m.ncols();
    let mut out = CMat::zeros(hi * dout * lo, cols);
    for h in 0..hi {
        for l in 0..lo {
            for y in 0..dout {
                let orow = (h * dout + y) * lo + l;
                for x in 0..din {
                    let coef = a[(y, x)];
                    if coef == C64::default() {
                        continue;
                    }
                    let irow = (h * din + x) * lo + l;
                    for col in 0..cols {
                        out[(orow, col)] += coef * m[(irow, col)];
                    }
                }
            }
        }
    }
    out
}

/// `(I ⊗ v† ⊗ I) m (I ⊗ v ⊗ I)` for an operator `m` on `dims`, i.e. the
/// compression of one tensor factor through the columns of `v`.
pub fn compress_local(m: &CMat, dims: &[usize], pos: usize, v: &CMat) -> CMat {
    let left = apply_local_left(m, dims, pos, &v.adjoint());
    // right multiplication through the adjoint: M W = (W† M†)†
    let left_t = left.adjoint();
    apply_local_left(&left_t, dims, pos, &v.adjoint()).adjoint()
}

/// Embed `op` (acting on `op_sites`, in that order) into the space of
/// `target_sites`; `dim_of` gives each site's dimension.
pub fn embed(op: &CMat, op_sites: &[usize], target_sites: &[usize], dim_of: impl Fn(usize) -> usize) -> CMat {
    let tdims: Vec<usize> = target_sites.iter().map(|&s| dim_of(s)).collect();
    let tstr = strides(&tdims);
    let pos: Vec<usize> = op_sites
        .iter()
        .map(|s| target_sites.iter().position(|t| t == s).expect("op site missing from target"))
        .collect();
    let rest: Vec<usize> = (0..target_sites.len()).filter(|p| !pos.contains(p)).collect();
    let odims: Vec<usize> = pos.iter().map(|&p| tdims[p]).collect();
    let rdims: Vec<usize> = rest.iter().map(|&p| tdims[p]).collect();
    let od: usize = odims.iter().product();
    let rd: usize = rdims.iter().product();
    assert_eq!(od, op.nrows(), "operator dimension does not match its sites");
    let ostr = strides(&odims);
    let rstr = strides(&rdims);
    let offset = |i: usize, r: usize| -> usize {
        let mut idx = 0;
        for (k, &p) in pos.iter().enumerate() {
            idx += ((i / ostr[k]) % odims[k]) * tstr[p];
        }
        for (k, &p) in rest.iter().enumerate() {
            idx += ((r / rstr[k]) % rdims[k]) * tstr[p];
        }
        idx
    };
    let total = od * rd;
    let mut out = CMat::zeros(total, total);
    let table: Vec<Vec<usize>> = (0..rd).map(|r| (0..od).map(|i| offset(i, r)).collect()).collect();
    for row in &table {
        for i in 0..od {
            for j in 0..od {
                let v = op[(i, j)];
                if v != C64::default() {
                    out[(row[i], row[j])] = v;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    #[test]
    fn eig_of_diagonal_is_permuted_identity() {
        let e = hermitian_eig(&Operator::diag(&[1.0, 0.0]), &tol()).unwrap();
        assert_eq!(e.values, vec![0.0, 1.0]);
        assert!((e.vectors[(1, 0)] - c(1.0, 0.0)).norm() < 1e-14);
        assert!((e.vectors[(0, 1)] - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn eig_of_pauli_x() {
        let e = hermitian_eig(&pauli_x(), &tol()).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // |−⟩ with its largest (first) entry made positive, then |+⟩
        assert!((e.vectors[(0, 0)] - c(s, 0.0)).norm() < 1e-12);
        assert!((e.vectors[(1, 0)] + c(s, 0.0)).norm() < 1e-12);
        assert!((e.vectors[(0, 1)] - c(s, 0.0)).norm() < 1e-12);
        assert!((e.vectors[(1, 1)] - c(s, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn eig_of_half_projector() {
        let e = hermitian_eig(&Operator::diag(&[0.5, 0.0]), &tol()).unwrap();
        assert!((e.values[0]).abs() < 1e-15 && (e.values[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let m = Operator::from_row_major(2, &[c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)]).unwrap();
        assert!(matches!(hermitian_eig(&m, &tol()), Err(LinalgError::NotHermitian(_))));
    }

    #[test]
    fn degenerate_basis_is_canonical() {
        // A rotated copy of diag(1,1,0) must give the same degenerate basis as any
        // other rotation inside the eigenspace.
        let e = hermitian_eig(&Operator::diag(&[1.0, 1.0, 0.0]), &tol()).unwrap();
        assert!((e.vectors[(0, 1)] - c(1.0, 0.0)).norm() < 1e-14);
        assert!((e.vectors[(1, 2)] - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn tensor_examples() {
        let i2 = Operator::identity(2);
        assert_eq!(tensor(&i2, &i2).unwrap(), Operator::identity(4));
        let xx = tensor(&pauli_x(), &pauli_x()).unwrap();
        assert!(xx.mul(&xx).approx_eq(&Operator::identity(4), 1e-14));
        let z = pauli_z();
        let zzzz = tensor_all(&[z.clone(), z.clone(), z.clone(), z]).unwrap();
        assert!(zzzz.trace().norm() < 1e-14);
    }

    #[test]
    fn tensor_overflow() {
        let big = Operator::identity(1 << 11);
        assert!(matches!(tensor(&big, &big), Err(LinalgError::OverflowDim(..))));
    }

    #[test]
    fn partial_trace_examples() {
        let i2 = Operator::identity(2);
        let ii = tensor(&i2, &i2).unwrap();
        let pt = partial_trace(&ii, &[0], &[2, 2]).unwrap();
        assert!(pt.approx_eq(&Operator::identity(2).scale(c(2.0, 0.0)), 1e-14));

        let zx = tensor(&pauli_z(), &pauli_x()).unwrap();
        assert!(partial_trace(&zx, &[0], &[2, 2]).unwrap().frobenius_norm() < 1e-14);

        let p00 = Operator::diag(&[1.0, 0.0, 0.0, 0.0]);
        let pt = partial_trace(&p00, &[1], &[2, 2]).unwrap();
        assert!(pt.approx_eq(&Operator::diag(&[1.0, 0.0]), 1e-14));

        assert!(matches!(partial_trace(&p00, &[0], &[2, 3]), Err(LinalgError::BadShape(_))));
    }

    #[test]
    fn kernel_projector_examples() {
        let k = kernel_projector(&Operator::zeros(3), &tol()).unwrap();
        assert!(k.approx_eq(&Operator::identity(3), 1e-14));
        let k = kernel_projector(&Operator::identity(2), &tol()).unwrap();
        assert!(k.frobenius_norm() < 1e-14);
        let plus = Operator::from_row_major(2, &[c(0.5, 0.), c(0.5, 0.), c(0.5, 0.), c(0.5, 0.)]).unwrap();
        let minus = Operator::from_row_major(2, &[c(0.5, 0.), c(-0.5, 0.), c(-0.5, 0.), c(0.5, 0.)]).unwrap();
        assert!(kernel_projector(&plus, &tol()).unwrap().approx_eq(&minus, 1e-12));
        assert!(matches!(kernel_projector(&pauli_z(), &tol()), Err(LinalgError::NotPSD(_))));
    }

    #[test]
    fn tolerance_invariants() {
        assert!(Tolerance::new(1e-8, 1e-9, 0).is_ok());
        assert!(Tolerance::new(1e-9, 1e-8, 0).is_err());
        assert!(Tolerance::new(1e-2, 1e-9, 0).is_err());
        assert!(Tolerance::new(1e-8, 0.0, 0).is_err());
    }

    #[test]
    fn svd_of_rank_deficient_matrices() {
        // Rank-2 products, the shape that trips the stock complex SVD.
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for (r, k, n) in [(10, 2, 4), (16, 3, 16), (6, 2, 6), (3, 1, 7)] {
            let a = CMat::from_fn(r, k, |_, _| c(next(), next()));
            let b = CMat::from_fn(k, n, |_, _| c(next(), next()));
            let m = &a * &b;
            let (s, u, v) = thin_svd(&m);
            let mut rec = CMat::zeros(r, n);
            for i in 0..k {
                rec += &u[i] * v[i].adjoint() * c(s[i], 0.0);
            }
            assert!((rec - &m).norm() < 1e-12 * m.norm().max(1.0));
            assert_eq!(rank(&m, 1e-9), k);
            let null = null_space(&m, 1e-9);
            assert_eq!(null.len(), n - k);
            assert!(null.iter().all(|x| (&m * x).norm() < 1e-12));
        }
    }

    #[test]
    fn null_space_wide_matrix() {
        let m = CMat::from_row_slice(1, 3, &[c(1., 0.), c(1., 0.), c(0., 0.)]);
        assert_eq!(null_space(&m, 1e-10).len(), 2);
    }
}
