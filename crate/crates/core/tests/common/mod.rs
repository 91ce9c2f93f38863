//! Seeded instance generators shared by the integration tests.
#![allow(dead_code)]

use clh_core::linalg::{c, kron_all, pauli_x, pauli_y, pauli_z, CMat, CVec, Tolerance};
use clh_core::model::{commutator_norm, Boundary, Carrier, CellKind, Instance, Lattice2D, Term};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, cols: usize) -> CMat {
    CMat::from_fn(r, cols, |_, _| {
        c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    })
}

/// Haar-ish unitary from the QR of a Gaussian matrix.
pub fn random_unitary(rng: &mut ChaCha8Rng, d: usize) -> CMat {
    gaussian(rng, d, d).qr().q()
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, d: usize) -> CMat {
    let g = gaussian(rng, d, d);
    (&g + g.adjoint()) * c(0.5, 0.0)
}

pub fn basis_proj(d: usize, k: usize) -> CMat {
    let mut m = CMat::zeros(d, d);
    m[(k, k)] = c(1.0, 0.0);
    m
}

pub fn diag(values: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_vec(values.iter().map(|&v| c(v, 0.0)).collect()))
}

fn conj_sites(m: &CMat, us: &[&CMat]) -> CMat {
    let u = kron_all(&us.iter().map(|u| (*u).clone()).collect::<Vec<_>>());
    &u * m * u.adjoint()
}

fn vertices(rows: usize, cols: usize) -> Lattice2D {
    Lattice2D::new(rows, cols, Boundary::Open, Carrier::Vertices)
}

/// Random nonempty sub-support of a cell (sorted).
fn sub_support(rng: &mut ChaCha8Rng, sites: &[usize]) -> Vec<usize> {
    loop {
        let s: Vec<usize> = sites.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

/// Family (a): random 0/1 diagonal projections conjugated by one fixed
/// product unitary. `density` is the chance of each diagonal entry being 1.
pub fn classical_conjugated(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    dims: Vec<usize>,
    terms_per_cell: usize,
    density: f64,
) -> Instance {
    let lat = vertices(rows, cols);
    let us: Vec<CMat> = dims.iter().map(|&d| random_unitary(rng, d)).collect();
    let mut terms = Vec::new();
    for cell in lat.cells() {
        for _ in 0..terms_per_cell {
            let support = sub_support(rng, &cell.sites);
            let d: usize = support.iter().map(|&s| dims[s]).product();
            let entries: Vec<f64> = (0..d).map(|_| if rng.random_bool(density) { 1.0 } else { 0.0 }).collect();
            let local: Vec<&CMat> = support.iter().map(|&s| &us[s]).collect();
            let m = conj_sites(&diag(&entries), &local);
            terms.push(Term::new(terms.len() as u64, support, m));
        }
    }
    Instance::new(lat, dims, terms, Tolerance::default())
}

/// Family (b): CSS-style plaquettes on an open vertex grid. Plaquette
/// (r, c) is X-type when (r + c) is even, Z-type otherwise, so diagonal
/// neighbours agree and edge neighbours overlap on two sites. Each term is
/// (I ± P)/2 with a random sign, conjugated by a random product unitary when
/// `conjugate` is set.
pub fn css_open(rng: &mut ChaCha8Rng, rows: usize, cols: usize, conjugate: bool) -> Instance {
    let lat = vertices(rows, cols);
    let n = lat.site_count();
    let us: Vec<CMat> = (0..n)
        .map(|_| if conjugate { random_unitary(rng, 2) } else { CMat::identity(2, 2) })
        .collect();
    let x = pauli_x().into_matrix();
    let z = pauli_z().into_matrix();
    let mut terms = Vec::new();
    for cell in lat.cells() {
        let p = if (cell.row + cell.col) % 2 == 0 { &x } else { &z };
        let word = kron_all(&vec![p.clone(); cell.sites.len()]);
        let dd = word.nrows();
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let m = (CMat::identity(dd, dd) + word * c(sign, 0.0)) * c(0.5, 0.0);
        let local: Vec<&CMat> = cell.sites.iter().map(|&s| &us[s]).collect();
        terms.push(Term::new(terms.len() as u64, cell.sites.clone(), conj_sites(&m, &local)));
    }
    Instance::new(lat, vec![2; n], terms, Tolerance::default())
}

/// The 2×2 edges torus with stars (I ± X⊗4)/2 and plaquettes (I ± Z⊗4)/2,
/// random signs, optionally conjugated by a random product unitary.
pub fn toric_variant(rng: &mut ChaCha8Rng, conjugate: bool) -> Instance {
    let lat = Lattice2D::new(2, 2, Boundary::Torus, Carrier::Edges);
    let n = lat.site_count();
    let us: Vec<CMat> = (0..n)
        .map(|_| if conjugate { random_unitary(rng, 2) } else { CMat::identity(2, 2) })
        .collect();
    let x = pauli_x().into_matrix();
    let z = pauli_z().into_matrix();
    let mut terms = Vec::new();
    for cell in lat.cells() {
        let p = if cell.kind == CellKind::Star { &x } else { &z };
        let word = kron_all(&vec![p.clone(); cell.sites.len()]);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let m = (CMat::identity(16, 16) + word * c(sign, 0.0)) * c(0.5, 0.0);
        let local: Vec<&CMat> = cell.sites.iter().map(|&s| &us[s]).collect();
        terms.push(Term::new(terms.len() as u64, cell.sites.clone(), conj_sites(&m, &local)));
    }
    Instance::new(lat, vec![2; n], terms, Tolerance::default())
}

/// CSS terms embedded in qutrits: each site is C² ⊕ C¹ and every term acts
/// as its qubit version on the C² parts and as zero elsewhere.
pub fn css_in_qutrits(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Instance {
    let base = css_open(rng, rows, cols, true);
    let lat = base.lattice;
    let n = lat.site_count();
    let embed = CMat::from_fn(3, 2, |i, j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) });
    let terms = base
        .terms
        .iter()
        .map(|t| {
            let e = kron_all(&vec![embed.clone(); t.support.len()]);
            Term::new(t.id, t.support.clone(), &e * t.matrix.matrix() * e.adjoint())
        })
        .collect();
    Instance::new(lat, vec![3; n], terms, Tolerance::default())
}

/// Family (c): a planted semi-separable site with an exempt term. Site 0 is
/// split by classical terms (rotated bases), and the exempt term
/// |ψ⟩⟨ψ|₀ ⊗ Q₁ couples across the split; every term touching site 0 also
/// touches site 1 and ignores site 0 on the range of Q₁, so all commute.
pub fn planted_exempt(rng: &mut ChaCha8Rng) -> Instance {
    let lat = vertices(2, 3);
    let dims: Vec<usize> = (0..6).map(|_| if rng.random_bool(0.4) { 3 } else { 2 }).collect();
    let us: Vec<CMat> = dims.iter().map(|&d| random_unitary(rng, d)).collect();
    let top1 = dims[1] - 1;
    let mut terms = Vec::new();
    for cell in lat.cells() {
        for _ in 0..2 {
            let mut support = sub_support(rng, &cell.sites);
            if support.contains(&0) && !support.contains(&1) {
                support.push(1);
                support.sort_unstable();
            }
            let sdims: Vec<usize> = support.iter().map(|&s| dims[s]).collect();
            let d: usize = sdims.iter().product();
            let strides = clh_core::linalg::strides(&sdims);
            let mut entries: Vec<f64> = (0..d).map(|_| if rng.random_bool(0.25) { 1.0 } else { 0.0 }).collect();
            if let (Some(p0), Some(p1)) = (support.iter().position(|&s| s == 0), support.iter().position(|&s| s == 1)) {
                // On x₁ = top, copy the x₀ = 0 entry to every x₀.
                for idx in 0..d {
                    let x0 = idx / strides[p0] % sdims[p0];
                    let x1 = idx / strides[p1] % sdims[p1];
                    if x1 == top1 && x0 != 0 {
                        entries[idx] = entries[idx - x0 * strides[p0]];
                    }
                }
            }
            let local: Vec<&CMat> = support.iter().map(|&s| &us[s]).collect();
            terms.push(Term::new(terms.len() as u64, support, conj_sites(&diag(&entries), &local)));
        }
    }
    let psi = gaussian(rng, dims[0], 1);
    let psi = &psi / c(psi.norm(), 0.0);
    let q = &us[1] * basis_proj(dims[1], top1) * us[1].adjoint();
    let ex = kron_all(&[&psi * psi.adjoint(), q]);
    terms.push(Term::new(terms.len() as u64, vec![0, 1], ex));
    Instance::new(lat, dims, terms, Tolerance::default())
}

fn bell_basis() -> Vec<CMat> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let vs = [
        [s, 0.0, 0.0, s],
        [s, 0.0, 0.0, -s],
        [0.0, s, s, 0.0],
        [0.0, s, -s, 0.0],
    ];
    vs.iter()
        .map(|v| {
            let col = CVec::from_vec(v.iter().map(|&x| c(x, 0.0)).collect());
            &col * col.adjoint()
        })
        .collect()
}

/// Two plaquettes on a 2×3 grid sharing the middle column, both diagonal in
/// one (rotated) Bell basis there: both middle sites carry full algebras of
/// both colours, so the residual graph is a 2-cycle.
pub fn bell_cycle(rng: &mut ChaCha8Rng) -> Instance {
    let lat = vertices(2, 3);
    let u = random_unitary(rng, 4);
    let bell: Vec<CMat> = bell_basis().iter().map(|b| &u * b * u.adjoint()).collect();
    // Middle column is sites 1 (top) and 4 (bottom); order the support so the
    // middle pair is adjacent: [side..., 1, 4] then permute to sorted order.
    let mut terms = Vec::new();
    for (k, side) in [[0usize, 3usize], [2, 5]].iter().enumerate() {
        let mut m = CMat::zeros(16, 16);
        for b in &bell {
            let dd: Vec<f64> = (0..4).map(|_| if rng.random_bool(0.35) { 1.0 } else { 0.0 }).collect();
            let su = random_unitary(rng, 2);
            let side_op = kron_all(&[su.clone(), su.clone()]) * diag(&dd) * kron_all(&[su.clone(), su]).adjoint();
            m += kron_all(&[b.clone(), side_op]);
        }
        // m acts on (1, 4, side0, side1); reorder to sorted support.
        let order = [1usize, 4, side[0], side[1]];
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        let mm = permute_sites(&m, &order, &sorted, 2);
        terms.push(Term::new(k as u64, sorted, mm));
    }
    Instance::new(lat, vec![2; 6], terms, Tolerance::default())
}

/// Re-express an operator on qubit sites listed in `from` order in `to` order.
pub fn permute_sites(m: &CMat, from: &[usize], to: &[usize], d: usize) -> CMat {
    let n = from.len();
    let dim = m.nrows();
    let perm: Vec<usize> = to.iter().map(|s| from.iter().position(|f| f == s).expect("same sites")).collect();
    let remap = |idx: usize| -> usize {
        // idx is in `to` order; build the `from` index.
        let mut digits = vec![0; n];
        let mut rem = idx;
        for k in (0..n).rev() {
            digits[k] = rem % d;
            rem /= d;
        }
        let mut from_digits = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            from_digits[p] = digits[k];
        }
        from_digits.iter().fold(0, |acc, &x| acc * d + x)
    };
    CMat::from_fn(dim, dim, |i, j| m[(remap(i), remap(j))])
}

/// A row of k plaquettes on a 2×(k+1) grid: the top row holds qubits, the
/// bottom row is trivial. Terms are classical in per-site rotated bases, so
/// every shared site is an R1 site (qubit blocks have rank-one overlaps).
pub fn chain(rng: &mut ChaCha8Rng, k: usize) -> Instance {
    let cols = k + 1;
    let lat = vertices(2, cols);
    let mut dims = vec![1; 2 * cols];
    for d in dims.iter_mut().take(cols) {
        *d = 2;
    }
    let us: Vec<CMat> = dims.iter().map(|&d| random_unitary(rng, d)).collect();
    let mut terms = Vec::new();
    for cell in lat.cells() {
        let support: Vec<usize> = cell.sites.iter().copied().filter(|&s| dims[s] > 1).collect();
        let d: usize = support.iter().map(|&s| dims[s]).product();
        let entries: Vec<f64> = (0..d).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let local: Vec<&CMat> = support.iter().map(|&s| &us[s]).collect();
        terms.push(Term::new(terms.len() as u64, support, conj_sites(&diag(&entries), &local)));
    }
    Instance::new(lat, dims, terms, Tolerance::default())
}

/// Commuting Hermitian terms with a few distinct eigenvalues, on at most
/// two plaquettes: random real diagonals in a rotated product basis.
pub fn weighted_classical(rng: &mut ChaCha8Rng) -> Instance {
    let cols = if rng.random_bool(0.5) { 2 } else { 3 };
    let lat = vertices(2, cols);
    let dims: Vec<usize> = (0..2 * cols).map(|_| if rng.random_bool(0.2) { 3 } else { 2 }).collect();
    let us: Vec<CMat> = dims.iter().map(|&d| random_unitary(rng, d)).collect();
    let levels = [0.0, 0.5, 1.0, 2.0];
    let mut terms = Vec::new();
    for cell in lat.cells() {
        for _ in 0..2 {
            let support = sub_support(rng, &cell.sites);
            let d: usize = support.iter().map(|&s| dims[s]).product();
            let entries: Vec<f64> = (0..d).map(|_| levels[rng.random_range(0..levels.len())]).collect();
            let local: Vec<&CMat> = support.iter().map(|&s| &us[s]).collect();
            terms.push(Term::new(terms.len() as u64, support, conj_sites(&diag(&entries), &local)));
        }
    }
    Instance::new(lat, dims, terms, Tolerance::default())
}

/// A random subalgebra ⊕ L(d1) ⊗ I_{d2} of L(d), conjugated by a random
/// unitary. Returns the planted (d1, d2) list (sorted), the unitary, and two
/// random Hermitian generators.
pub fn planted_algebra(rng: &mut ChaCha8Rng) -> (usize, Vec<(usize, usize)>, CMat, Vec<CMat>) {
    let d = rng.random_range(2..=9);
    let mut blocks = Vec::new();
    let mut left = d;
    while left > 0 {
        let d1 = rng.random_range(1..=left.min(3));
        let max_d2 = left / d1;
        let d2 = rng.random_range(1..=max_d2.min(3));
        blocks.push((d1, d2));
        left -= d1 * d2;
    }
    let u = random_unitary(rng, d);
    let mut gens = Vec::new();
    for _ in 0..2 {
        let mut m = CMat::zeros(d, d);
        let mut off = 0;
        for &(d1, d2) in &blocks {
            let x = random_hermitian(rng, d1);
            let b = kron_all(&[x, CMat::identity(d2, d2)]);
            let n = d1 * d2;
            m.view_mut((off, off), (n, n)).copy_from(&b);
            off += n;
        }
        gens.push(&u * m * u.adjoint());
    }
    blocks.sort_unstable();
    (d, blocks, u, gens)
}

fn paulis() -> [CMat; 4] {
    [
        CMat::identity(2, 2),
        pauli_x().into_matrix(),
        pauli_y().into_matrix(),
        pauli_z().into_matrix(),
    ]
}

/// Random Pauli operator on m qubits, not the identity when `nontrivial`.
fn random_pauli(rng: &mut ChaCha8Rng, m: usize) -> CMat {
    let ps = paulis();
    loop {
        let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..4)).collect();
        if idx.iter().any(|&i| i != 0) {
            return kron_all(&idx.iter().map(|&i| ps[i].clone()).collect::<Vec<_>>());
        }
    }
}

fn commutes_with_all(inst_like: &Instance, t: &Term) -> bool {
    inst_like.terms.iter().all(|o| commutator_norm(inst_like, o, t) <= 1e-9)
}

/// Factorized instance from conjugated Pauli patterns on an open vertex
/// grid: every site is 2^m dimensional (m ∈ {1, 2}) with its own random
/// basis, and terms are c · ⊗_q U_q P_q U_q† on cell subsets, kept only if
/// they commute with the earlier ones. With `planted`, one site gets an
/// extra level: factors there are P ⊕ s (block-diagonal), a separable site.
pub fn factorized_pauli(rng: &mut ChaCha8Rng, rows: usize, cols: usize, planted: bool) -> Instance {
    let lat = vertices(rows, cols);
    let n = lat.site_count();
    // Redraw until the dense oracle stays cheap (global dim ≤ 512).
    let (qubits, planted_site, dims) = loop {
        let qubits: Vec<usize> = (0..n).map(|_| if rng.random_bool(0.2) { 2 } else { 1 }).collect();
        let planted_site = if planted { Some(rng.random_range(0..n)) } else { None };
        let dims: Vec<usize> = (0..n)
            .map(|q| (1 << qubits[q]) + usize::from(planted_site == Some(q)))
            .collect();
        if dims.iter().product::<usize>() <= 512 {
            break (qubits, planted_site, dims);
        }
    };
    let us: Vec<CMat> = dims.iter().map(|&d| random_unitary(rng, d)).collect();
    let mut inst = Instance::new(lat, dims.clone(), Vec::new(), Tolerance::default());
    let cells = lat.cells();
    let attempts = 6 * cells.len();
    for _ in 0..attempts {
        let cell = &cells[rng.random_range(0..cells.len())];
        let support = sub_support(rng, &cell.sites);
        let coeff = rng.random_range(0.3..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let factors: Vec<CMat> = support
            .iter()
            .enumerate()
            .map(|(k, &q)| {
                let p = random_pauli(rng, qubits[q]);
                let p = if planted_site == Some(q) {
                    let s: f64 = [-1.0, 0.0, 1.0, 0.5][rng.random_range(0..4)];
                    let mut m = CMat::zeros(dims[q], dims[q]);
                    let h = 1 << qubits[q];
                    m.view_mut((0, 0), (h, h)).copy_from(&p);
                    m[(h, h)] = c(s, 0.0);
                    m
                } else {
                    p
                };
                let f = &us[q] * p * us[q].adjoint();
                if k == 0 {
                    f * c(coeff, 0.0)
                } else {
                    f
                }
            })
            .collect();
        let t = Term::factorized(inst.terms.len() as u64, support, factors);
        if commutes_with_all(&inst, &t) {
            inst.terms.push(t);
        }
    }
    inst
}

/// Factorized instance with a planted singular pair: on a shared site the
/// two terms carry orthogonal projections (a Zero site) and on another
/// shared site random Hermitian factors that neither commute nor
/// anticommute (a Cross site). Extra regular terms are added if they commute.
pub fn factorized_singular(rng: &mut ChaCha8Rng) -> Instance {
    let lat = vertices(2, 3);
    let n = lat.site_count();
    let us: Vec<CMat> = (0..n).map(|_| random_unitary(rng, 2)).collect();
    let cells = lat.cells();
    let cell = &cells[rng.random_range(0..cells.len())];
    let mut shared: Vec<usize> = cell.sites.clone();
    // Shuffle-free pick of two distinct sites.
    let a = shared.remove(rng.random_range(0..shared.len()));
    let b = shared.remove(rng.random_range(0..shared.len()));
    let mut sup = vec![a, b];
    sup.sort_unstable();
    let p0 = &us[a] * basis_proj(2, 0) * us[a].adjoint();
    let p1 = &us[a] * basis_proj(2, 1) * us[a].adjoint();
    let (h1, h2) = (random_hermitian(rng, 2), random_hermitian(rng, 2));
    let order = |fa: CMat, fb: CMat| if a < b { vec![fa, fb] } else { vec![fb, fa] };
    let mut inst = Instance::new(lat, vec![2; n], Vec::new(), Tolerance::default());
    inst.terms.push(Term::factorized(0, sup.clone(), order(p0, h1)));
    inst.terms.push(Term::factorized(1, sup, order(p1, h2)));
    for _ in 0..10 {
        let cell = &cells[rng.random_range(0..cells.len())];
        let support = sub_support(rng, &cell.sites);
        let factors: Vec<CMat> = support
            .iter()
            .map(|&q| &us[q] * random_pauli(rng, 1) * us[q].adjoint())
            .collect();
        let t = Term::factorized(inst.terms.len() as u64, support, factors);
        if commutes_with_all(&inst, &t) {
            inst.terms.push(t);
        }
    }
    inst
}
