//! Finite-dimensional *-algebras on one site: generation, centers,
//! commutants, the block (Wedderburn) decomposition, and the way two
//! commuting terms meet on a shared site.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{
    c, canonical_basis, canonical_isometry, column_space, eig_hermitian_matrix, null_space, scale_of, unvectorize, vectorize, CMat, CVec,
    Span, Tolerance, C64,
};
use crate::model::{Instance, Term, TermId};

const MAX_ATTEMPTS: u64 = 8;
// Eigenvalues of random central elements closer than this (relative) are
// treated as one cluster; genuine gaps are O(1).
const CLUSTER_GAP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("site {site} is not in the support of term {term}")]
    SiteNotInSupport { term: TermId, site: usize },
    #[error("numerical degeneracy: {0}; try another seed")]
    NumericalDegeneracy(String),
    #[error("terms {a} and {b} both act trivially on site {site}")]
    BothTrivial { a: TermId, b: TermId, site: usize },
    #[error("terms {a} and {b} share {shared} sites, expected exactly 1")]
    NotSingleOverlap { a: TermId, b: TermId, shared: usize },
}

pub type Result<T> = std::result::Result<T, AlgebraError>;

/// A *-algebra given by a Hilbert-Schmidt orthonormal basis.
#[derive(Clone, Debug)]
pub struct MatrixAlgebra {
    pub dim: usize,
    pub basis: Vec<CMat>,
    pub contains_identity: bool,
}

impl MatrixAlgebra {
    pub fn trivial(dim: usize) -> Self {
        MatrixAlgebra {
            dim,
            basis: vec![CMat::identity(dim, dim) / c((dim as f64).sqrt(), 0.0)],
            contains_identity: true,
        }
    }

    pub fn full(dim: usize) -> Self {
        let basis = (0..dim * dim)
            .map(|k| {
                let mut m = CMat::zeros(dim, dim);
                m[(k % dim, k / dim)] = c(1.0, 0.0);
                m
            })
            .collect();
        MatrixAlgebra {
            dim,
            basis,
            contains_identity: true,
        }
    }

    fn from_span(dim: usize, span: &Span) -> Self {
        let basis: Vec<CMat> = span.basis().iter().map(|v| unvectorize(v, dim)).collect();
        let eye = vectorize(&CMat::identity(dim, dim));
        let contains_identity = span.distance(&eye) <= 1e-8;
        MatrixAlgebra {
            dim,
            basis,
            contains_identity,
        }
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Only multiples of the identity.
    pub fn is_trivial(&self) -> bool {
        self.basis.len() <= 1
    }

    pub fn is_full(&self) -> bool {
        self.basis.len() == self.dim * self.dim
    }

    /// Relative distance of `m` from the span.
    pub fn distance(&self, m: &CMat) -> f64 {
        let v = vectorize(m);
        let nv = v.norm();
        if nv == 0.0 {
            return 0.0;
        }
        let mut r = v.clone();
        for b in &self.basis {
            let bv = vectorize(b);
            let p = bv.dotc(&r);
            r -= bv * p;
        }
        r.norm() / nv
    }

    pub fn contains(&self, m: &CMat, tol: &Tolerance) -> bool {
        self.distance(m) <= tol.eps_eq
    }

    /// Symmetric subspace distance: the larger of the two one-sided gaps.
    pub fn span_distance(&self, other: &MatrixAlgebra) -> f64 {
        if self.len() != other.len() {
            return 1.0;
        }
        let a = other.basis.iter().map(|b| self.distance(b)).fold(0.0, f64::max);
        let b = self.basis.iter().map(|b| other.distance(b)).fold(0.0, f64::max);
        a.max(b)
    }

    /// Hermitian elements spanning the algebra over the reals.
    pub fn hermitian_generators(&self) -> Vec<CMat> {
        let mut out = Vec::with_capacity(2 * self.basis.len());
        for b in &self.basis {
            let h = (b + b.adjoint()) * c(0.5, 0.0);
            let k = (b - b.adjoint()) * c(0.0, -0.5);
            out.push(h);
            out.push(k);
        }
        out
    }

    /// A seeded random Hermitian element.
    pub fn random_hermitian(&self, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = CMat::zeros(self.dim, self.dim);
        for g in self.hermitian_generators() {
            let w: f64 = rng.sample(StandardNormal);
            h += g * c(w, 0.0);
        }
        (&h + h.adjoint()) * c(0.5, 0.0)
    }

    /// The algebra compressed by an isometry `w` (columns): {w† a w}.
    pub fn compress(&self, w: &CMat) -> MatrixAlgebra {
        let gens: Vec<CMat> = self.basis.iter().map(|b| w.adjoint() * b * w).collect();
        let n = w.ncols();
        let mut span = Span::new();
        let vs: Vec<CVec> = gens.iter().map(vectorize).collect();
        push_span(&mut span, &vs, 1e-9);
        MatrixAlgebra::from_span(n, &span)
    }
}

// Orthonormal basis for span(vs), discarding directions below rel * largest
// singular value. Independent of the order of `vs`.
fn push_span(span: &mut Span, vs: &[CVec], rel: f64) {
    if vs.is_empty() {
        return;
    }
    let rows = vs[0].len();
    let m = CMat::from_fn(rows, vs.len(), |i, j| vs[j][i]);
    for u in column_space(&m, rel) {
        span.try_push(&u, 1e-9);
    }
}

/// The smallest *-algebra containing `gens` and the identity. Closure is by
/// repeated products until the span stops growing (at most dim² elements).
pub fn generate_algebra(gens: &[CMat], dim: usize, tol: &Tolerance) -> MatrixAlgebra {
    let mut span = Span::new();
    span.try_push(&vectorize(&CMat::identity(dim, dim)), 1e-12);
    let mut seeds: Vec<CVec> = Vec::new();
    for g in gens {
        seeds.push(vectorize(g));
        seeds.push(vectorize(&g.adjoint()));
    }
    push_span(&mut span, &seeds, tol.eps_rank);
    close_span(&mut span, dim);
    MatrixAlgebra::from_span(dim, &span)
}

fn close_span(span: &mut Span, dim: usize) {
    let cap = dim * dim;
    let mut done = 0;
    while done < span.len() && span.len() < cap {
        let a = unvectorize(&span.basis()[done], dim);
        let mut k = 0;
        while k <= done && span.len() < cap {
            let b = unvectorize(&span.basis()[k], dim);
            // Unit-norm factors: judge the residual on an absolute scale, or
            // rounding noise in near-zero products reads as a new direction.
            for prod in [&a * &b, &b * &a] {
                span.try_push_abs(&vectorize(&prod), 1e-8);
            }
            k += 1;
        }
        done += 1;
    }
}

/// Split a term on `dims` (its support order) into the blocks h_ij with
/// m = Σ h_ij ⊗ |i⟩⟨j| over the complement of tensor position `pos`.
pub fn local_blocks(m: &CMat, dims: &[usize], pos: usize) -> Vec<CMat> {
    let d = dims[pos];
    let hi: usize = dims[..pos].iter().product();
    let lo: usize = dims[pos + 1..].iter().product();
    let rest = hi * lo;
    let idx = |x: usize, r: usize| -> usize {
        let (h, l) = (r / lo, r % lo);
        (h * d + x) * lo + l
    };
    let mut out = Vec::with_capacity(rest * rest);
    for i in 0..rest {
        for j in 0..rest {
            out.push(CMat::from_fn(d, d, |a, b| m[(idx(a, i), idx(b, j))]));
        }
    }
    out
}

/// Algebra on one tensor position generated by a matrix's local blocks.
pub fn induced_algebra_of(m: &CMat, dims: &[usize], pos: usize, tol: &Tolerance) -> MatrixAlgebra {
    generate_algebra(&local_blocks(m, dims, pos), dims[pos], tol)
}

/// Induced algebra of an instance term on one of its sites.
pub fn induced_algebra(inst: &Instance, term: &Term, site: usize) -> Result<MatrixAlgebra> {
    let pos = term.position(site).ok_or(AlgebraError::SiteNotInSupport { term: term.id, site })?;
    let dims = inst.dims_of(&term.support);
    Ok(induced_algebra_of(term.matrix.matrix(), &dims, pos, &inst.tol))
}

fn commutation_system(gens: &[CMat], dim: usize) -> CMat {
    // vec(x b - b x) = (bᵀ ⊗ I - I ⊗ b) vec(x) for column-major vec.
    let n2 = dim * dim;
    let mut sys = CMat::zeros(n2 * gens.len().max(1), n2);
    for (g, b) in gens.iter().enumerate() {
        for col in 0..n2 {
            let mut x = CMat::zeros(dim, dim);
            x[(col % dim, col / dim)] = c(1.0, 0.0);
            let comm = &x * b - b * &x;
            for (r, v) in comm.as_slice().iter().enumerate() {
                sys[(g * n2 + r, col)] = *v;
            }
        }
    }
    sys
}

/// {x : [x, g] = 0 for every g}.
pub fn commutant(gens: &[CMat], dim: usize, tol: &Tolerance) -> MatrixAlgebra {
    if gens.is_empty() {
        return MatrixAlgebra::full(dim);
    }
    let sys = commutation_system(gens, dim);
    let null = null_space(&sys, tol.eps_rank.max(1e-10));
    let mut span = Span::new();
    push_span(&mut span, &null, 1e-9);
    MatrixAlgebra::from_span(dim, &span)
}

/// Z(A) = {a ∈ A : [a, b] = 0 for all b ∈ A}.
pub fn center(alg: &MatrixAlgebra, tol: &Tolerance) -> MatrixAlgebra {
    let k = alg.len();
    let d = alg.dim;
    let n2 = d * d;
    // Coefficient system: Σ_k c_k [b_k, b_l] = 0 for every l.
    let mut sys = CMat::zeros(n2 * k, k);
    for (kk, bk) in alg.basis.iter().enumerate() {
        for (l, bl) in alg.basis.iter().enumerate() {
            let comm = bk * bl - bl * bk;
            for (r, v) in comm.as_slice().iter().enumerate() {
                sys[(l * n2 + r, kk)] = *v;
            }
        }
    }
    let null = null_space(&sys, tol.eps_rank.max(1e-10));
    let elems: Vec<CVec> = null
        .iter()
        .map(|coef| {
            let mut m = CMat::zeros(d, d);
            for (kk, bk) in alg.basis.iter().enumerate() {
                m += bk * coef[kk];
            }
            vectorize(&m)
        })
        .collect();
    let mut span = Span::new();
    span.try_push(&vectorize(&CMat::identity(d, d)), 1e-12);
    push_span(&mut span, &elems, 1e-9);
    MatrixAlgebra::from_span(d, &span)
}

/// One block H_i = H_i¹ ⊗ H_i² of a decomposition.
#[derive(Clone, Debug)]
pub struct Block {
    pub projector: CMat,
    pub d1: usize,
    pub d2: usize,
    /// d1·d2 × dim co-isometry with `unitary * projector = unitary`; it maps
    /// the algebra restricted to the block onto L(d1) ⊗ I_{d2}.
    pub unitary: CMat,
}

impl Block {
    pub fn dim(&self) -> usize {
        self.d1 * self.d2
    }

    /// Orthonormal basis of the block range, as columns.
    pub fn isometry(&self) -> CMat {
        self.unitary.adjoint()
    }
}

#[derive(Clone, Debug)]
pub struct BlockDecomposition {
    pub dim: usize,
    pub blocks: Vec<Block>,
}

impl BlockDecomposition {
    /// Sorted block dimensions d1·d2.
    pub fn profile(&self) -> Vec<usize> {
        let mut p: Vec<usize> = self.blocks.iter().map(Block::dim).collect();
        p.sort_unstable();
        p
    }

    pub fn projectors(&self) -> Vec<CMat> {
        self.blocks.iter().map(|b| b.projector.clone()).collect()
    }

    /// Check Σ Π_i = I and Π_i Π_j = δ_ij Π_i.
    pub fn is_resolution(&self, eps: f64) -> bool {
        let mut sum = CMat::zeros(self.dim, self.dim);
        for (i, a) in self.blocks.iter().enumerate() {
            sum += &a.projector;
            for (j, b) in self.blocks.iter().enumerate() {
                let prod = &a.projector * &b.projector;
                let want = if i == j { a.projector.clone() } else { CMat::zeros(self.dim, self.dim) };
                if (prod - want).norm() > eps * scale_of(a.projector.norm()) {
                    return false;
                }
            }
        }
        (sum - CMat::identity(self.dim, self.dim)).norm() <= eps * scale_of((self.dim as f64).sqrt())
    }
}

/// Distance of a block-local matrix from L(d1) ⊗ I_{d2}, and its L(d1) part.
pub fn split_left(m: &CMat, d1: usize, d2: usize) -> (CMat, f64) {
    let x = CMat::from_fn(d1, d1, |a, b| {
        (0..d2).map(|l| m[(a * d2 + l, b * d2 + l)]).sum::<C64>() / c(d2 as f64, 0.0)
    });
    let back = kron(&x, &CMat::identity(d2, d2));
    let err = (m - back).norm() / scale_of(m.norm());
    (x, err)
}

/// Distance of a block-local matrix from I_{d1} ⊗ L(d2), and its L(d2) part.
pub fn split_right(m: &CMat, d1: usize, d2: usize) -> (CMat, f64) {
    let y = CMat::from_fn(d2, d2, |a, b| {
        (0..d1).map(|k| m[(k * d2 + a, k * d2 + b)]).sum::<C64>() / c(d1 as f64, 0.0)
    });
    let back = kron(&CMat::identity(d1, d1), &y);
    let err = (m - back).norm() / scale_of(m.norm());
    (y, err)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Wedderburn decomposition of a *-algebra containing the identity.
/// Deterministic given `tol.seed`; re-seeds internally up to 8 times.
pub fn structure_decompose(alg: &MatrixAlgebra, tol: &Tolerance) -> Result<BlockDecomposition> {
    let d = alg.dim;
    if alg.is_trivial() {
        return Ok(BlockDecomposition {
            dim: d,
            blocks: vec![Block {
                projector: CMat::identity(d, d),
                d1: 1,
                d2: d,
                unitary: CMat::identity(d, d),
            }],
        });
    }
    let z = center(alg, tol);
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        match try_decompose(alg, &z, tol, tol.seed.wrapping_add(attempt)) {
            Ok(dec) => return Ok(dec),
            Err(msg) => last = msg,
        }
    }
    Err(AlgebraError::NumericalDegeneracy(last))
}

fn try_decompose(
    alg: &MatrixAlgebra,
    z: &MatrixAlgebra,
    tol: &Tolerance,
    seed: u64,
) -> std::result::Result<BlockDecomposition, String> {
    let d = alg.dim;
    let h = z.random_hermitian(seed);
    let eig = eig_hermitian_matrix(&h);
    let gap = CLUSTER_GAP * scale_of(eig.spectral_radius());
    let clusters = eig.clusters(gap);
    if clusters.len() != z.len() {
        return Err(format!(
            "central element has {} eigenvalue clusters but the center has dimension {}",
            clusters.len(),
            z.len()
        ));
    }
    let mut projs: Vec<CMat> = clusters
        .iter()
        .map(|cl| {
            let q = CMat::from_fn(d, cl.len(), |i, j| eig.vectors[(i, cl[j])]);
            &q * q.adjoint()
        })
        .collect();
    let first_index = |p: &CMat| (0..d).find(|&k| p[(k, k)].re > 1e-6).unwrap_or(d);
    // Stable sort keeps eigenvalue order among ties.
    projs.sort_by_key(first_index);

    let mut blocks = Vec::with_capacity(projs.len());
    for (bi, p) in projs.into_iter().enumerate() {
        let w = canonical_isometry(&p);
        let n = w.ncols();
        let sub = alg.compress(&w);
        let r = sub.len();
        let d1 = (r as f64).sqrt().round() as usize;
        if d1 * d1 != r || d1 == 0 || n % d1 != 0 {
            return Err(format!("block {bi}: restricted algebra has dimension {r}, not a square dividing {n}"));
        }
        let d2 = n / d1;
        let u_local = if d1 == 1 {
            CMat::identity(n, n)
        } else {
            block_unitary(&sub, d1, d2, seed.wrapping_add(1000 + bi as u64))?
        };
        let unitary = &u_local * w.adjoint();
        for b in &alg.basis {
            let local = &unitary * b * unitary.adjoint();
            let (_, err) = split_left(&local, d1, d2);
            if err > tol.eps_eq.max(1e-9) * 10.0 {
                return Err(format!("block {bi}: conjugated algebra is off L(d1)⊗I by {err:.2e}"));
            }
        }
        blocks.push(Block {
            projector: (&p + p.adjoint()) * c(0.5, 0.0),
            d1,
            d2,
            unitary,
        });
    }
    Ok(BlockDecomposition { dim: d, blocks })
}

fn isometry_of(p: &CMat) -> CMat {
    let eig = eig_hermitian_matrix(p);
    eig.columns(|v| v > 0.5)
}

// Unitary on a block (local coordinates) taking the simple algebra `sub`
// ≅ L(d1) to L(d1) ⊗ I_{d2}, built from matrix units.
fn block_unitary(sub: &MatrixAlgebra, d1: usize, d2: usize, seed: u64) -> std::result::Result<CMat, String> {
    let n = sub.dim;
    for attempt in 0..MAX_ATTEMPTS {
        let h = sub.random_hermitian(seed.wrapping_add(attempt));
        let eig = eig_hermitian_matrix(&h);
        let gap = CLUSTER_GAP * scale_of(eig.spectral_radius());
        let clusters = eig.clusters(gap);
        if clusters.len() != d1 || clusters.iter().any(|cl| cl.len() != d2) {
            continue;
        }
        let e: Vec<CMat> = clusters
            .iter()
            .map(|cl| {
                let q = CMat::from_fn(n, cl.len(), |i, j| eig.vectors[(i, cl[j])]);
                &q * q.adjoint()
            })
            .collect();
        let w1 = canonical_basis(&isometry_of(&e[0]));
        let mut u = CMat::zeros(n, n);
        for k in 0..d1 {
            let ek1 = if k == 0 {
                e[0].clone()
            } else {
                let mut best = CMat::zeros(n, n);
                let mut best_norm = 0.0;
                for b in &sub.basis {
                    let cand = &e[k] * b * &e[0];
                    let nc = cand.norm();
                    if nc > best_norm + 1e-12 {
                        best_norm = nc;
                        best = cand;
                    }
                }
                if best_norm <= 1e-9 {
                    return Err("no matrix unit connects two minimal projections".into());
                }
                best * c((d2 as f64).sqrt() / best_norm, 0.0)
            };
            for (l, wl) in w1.iter().enumerate() {
                let f = &ek1 * wl;
                for col in 0..n {
                    u[(k * d2 + l, col)] = f[col].conj();
                }
            }
        }
        let defect = (&u * u.adjoint() - CMat::identity(n, n)).norm();
        if defect > 1e-7 {
            continue;
        }
        return Ok(u);
    }
    Err("could not split a simple block into matrix units".into())
}

/// The way two commuting terms decouple on their one shared site.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CommuteWay {
    pub profile: Vec<usize>,
    /// Id of the term acting trivially, for single-block profiles.
    pub which_trivial: Option<TermId>,
}

impl CommuteWay {
    pub fn label(&self) -> String {
        let parts: Vec<String> = self.profile.iter().map(|d| d.to_string()).collect();
        format!("({})", parts.join(","))
    }
}

/// Decomposition of the better of the two induced algebras (more blocks;
/// ties go to `a`), plus its profile.
pub fn better_decomposition(
    inst: &Instance,
    a: &Term,
    b: &Term,
    site: usize,
) -> Result<(BlockDecomposition, CommuteWay)> {
    let alg_a = induced_algebra(inst, a, site)?;
    let alg_b = induced_algebra(inst, b, site)?;
    if alg_a.is_trivial() && alg_b.is_trivial() {
        return Err(AlgebraError::BothTrivial { a: a.id, b: b.id, site });
    }
    let dec_a = structure_decompose(&alg_a, &inst.tol)?;
    let dec_b = structure_decompose(&alg_b, &inst.tol)?;
    let dec = if dec_b.blocks.len() > dec_a.blocks.len() { dec_b } else { dec_a };
    let which_trivial = if dec.blocks.len() == 1 {
        if alg_a.is_trivial() {
            Some(a.id)
        } else if alg_b.is_trivial() {
            Some(b.id)
        } else {
            None
        }
    } else {
        None
    };
    let way = CommuteWay {
        profile: dec.profile(),
        which_trivial,
    };
    Ok((dec, way))
}

pub fn classify_way(inst: &Instance, a: &Term, b: &Term, site: usize) -> Result<CommuteWay> {
    let shared = a.support.iter().filter(|s| b.support.contains(s)).count();
    if shared != 1 {
        return Err(AlgebraError::NotSingleOverlap { a: a.id, b: b.id, shared });
    }
    Ok(better_decomposition(inst, a, b, site)?.1)
}
