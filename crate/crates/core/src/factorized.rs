//! Factorized instances: every term is a tensor product of one-site factors.
//!
//! Pairs of terms commute either regularly (factors ±-commute site by site)
//! or singularly (some site where they do neither, which forces a product of
//! factors to vanish elsewhere). Singular pairs and shared invariant
//! subspaces both expose separable sites; splitting on them builds a tree
//! whose leaves are equivalent to qubit stabilizer Hamiltonians.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{Budget, BudgetExceeded};
use crate::linalg::{c, canonical_basis, canonical_isometry, eig_hermitian_matrix, kernel_projector, CMat, CVec, Operator, C64};
use crate::model::{commutator_norm, Instance, Term, TermId};
use crate::reduction::{self, restrict_site, site_commutator_norm, ReductionError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorizedError {
    #[error("term {0} has no per-site factors")]
    NotFactorized(TermId),
    #[error("terms {0} and {1} do not commute")]
    NotCommuting(TermId, TermId),
    #[error("site {0} is separable; split it first (see build_subspace_tree)")]
    SeparableSitePresent(usize),
    #[error("terms {0} and {1} commute in a singular way, so some site is separable; split it first")]
    IrregularPair(TermId, TermId),
    #[error("site {0}: normalized factors do not generate a qubit algebra (dimension not a power of two); try another seed")]
    NonPowerOfTwoBlock(usize),
    #[error("term {term}: factor on site {site} does not square to a multiple of I")]
    NotInvolution { term: TermId, site: usize },
    #[error("Pauli words of terms {0} and {1} anticommute")]
    NonCommutingWords(TermId, TermId),
    #[error("term {0}: eigenvalue must be +1 or -1")]
    BadEigenvalueSign(TermId),
    #[error("bad leaf: {0}")]
    BadLeaf(String),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Budget(#[from] BudgetExceeded),
}

impl From<crate::algebra::AlgebraError> for FactorizedError {
    fn from(e: crate::algebra::AlgebraError) -> Self {
        FactorizedError::Reduction(e.into())
    }
}

pub type Result<T> = std::result::Result<T, FactorizedError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SiteRelation {
    /// h^q ĥ^q = ± ĥ^q h^q (sign: +1 commute, -1 anticommute).
    Dash(i8),
    /// h^q ĥ^q = 0.
    Zero,
    /// Neither.
    Cross,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommuteMode {
    pub a: TermId,
    pub b: TermId,
    pub sites: Vec<(usize, SiteRelation)>,
    pub singular: bool,
}

fn factor(t: &Term, site: usize) -> Result<&CMat> {
    let fs = t.factors.as_ref().ok_or(FactorizedError::NotFactorized(t.id))?;
    let pos = t.position(site).expect("site in support");
    Ok(fs[pos].matrix())
}

pub fn relation(a: &CMat, b: &CMat, eps: f64) -> SiteRelation {
    let scale = (a.norm() * b.norm()).max(1.0);
    let ab = a * b;
    let ba = b * a;
    if ab.norm() <= eps * scale {
        SiteRelation::Zero
    } else if (&ab - &ba).norm() <= eps * scale {
        SiteRelation::Dash(1)
    } else if (&ab + &ba).norm() <= eps * scale {
        SiteRelation::Dash(-1)
    } else {
        SiteRelation::Cross
    }
}

/// Per shared site relation of two factorized terms.
pub fn commute_mode(inst: &Instance, a: &Term, b: &Term) -> Result<CommuteMode> {
    if a.factors.is_none() {
        return Err(FactorizedError::NotFactorized(a.id));
    }
    if b.factors.is_none() {
        return Err(FactorizedError::NotFactorized(b.id));
    }
    let limit = inst.tol.eps_eq * (a.matrix.frobenius_norm() * b.matrix.frobenius_norm()).max(1.0);
    if commutator_norm(inst, a, b) > limit {
        return Err(FactorizedError::NotCommuting(a.id, b.id));
    }
    let mut sites = Vec::new();
    for &q in &a.support {
        if b.acts_on(q) {
            sites.push((q, relation(factor(a, q)?, factor(b, q)?, inst.tol.eps_eq)));
        }
    }
    let singular = sites.iter().any(|(_, r)| *r == SiteRelation::Cross);
    Ok(CommuteMode {
        a: a.id,
        b: b.id,
        sites,
        singular,
    })
}

/// All overlapping pairs, in term order.
pub fn all_modes(inst: &Instance) -> Result<Vec<CommuteMode>> {
    let mut out = Vec::new();
    for i in 0..inst.terms.len() {
        for j in i + 1..inst.terms.len() {
            let (a, b) = (&inst.terms[i], &inst.terms[j]);
            if a.support.iter().any(|s| b.acts_on(*s)) {
                out.push(commute_mode(inst, a, b)?);
            }
        }
    }
    Ok(out)
}

/// A site and a nontrivial decomposition of it kept by every term.
#[derive(Clone, Debug)]
pub struct SeparableSite {
    pub site: usize,
    pub projectors: Vec<CMat>,
}

fn keeps_all(inst: &Instance, site: usize, projs: &[CMat]) -> bool {
    inst.terms_on(site).into_iter().all(|k| {
        let t = &inst.terms[k];
        let scale = t.matrix.frobenius_norm().max(1.0);
        projs
            .iter()
            .all(|p| site_commutator_norm(inst, t, site, p) <= inst.tol.eps_eq * scale)
    })
}

// ker(f) ⊕ ker(f)^⊥ for a factor f, when both parts are nonzero.
fn kernel_split(inst: &Instance, f: &CMat) -> Option<Vec<CMat>> {
    let op = Operator::from_matrix(f * f.adjoint()).ok()?;
    let k = kernel_projector(&op, &inst.tol).ok()?.into_matrix();
    let r = k.trace().re.round() as usize;
    if r == 0 || r == f.nrows() {
        return None;
    }
    let rest = CMat::identity(f.nrows(), f.nrows()) - &k;
    Some(vec![k, rest])
}

/// First separable site in ascending order: kernel splits from singular pairs
/// at their Zero sites first, then the shared-commutant scan.
pub fn find_separable_factorized(inst: &Instance) -> Result<Option<SeparableSite>> {
    let modes = all_modes(inst)?;
    for site in 0..inst.site_count() {
        if inst.dim(site) < 2 {
            continue;
        }
        for m in modes.iter().filter(|m| m.singular) {
            if !m.sites.iter().any(|&(q, r)| q == site && r == SiteRelation::Zero) {
                continue;
            }
            for id in [m.a, m.b] {
                let t = inst.term(id).expect("mode term exists");
                if let Some(projs) = kernel_split(inst, factor(t, site)?) {
                    if keeps_all(inst, site, &projs) {
                        return Ok(Some(SeparableSite { site, projectors: projs }));
                    }
                }
            }
        }
        if let Some(cert) = reduction::semi_separable_at(inst, site)? {
            if cert.exempt_term.is_none() {
                return Ok(Some(SeparableSite {
                    site,
                    projectors: cert.projectors,
                }));
            }
            // The per-term candidate needed an exemption; a split shared by
            // every term may still exist.
            if let Some(projectors) = reduction::separable_split(inst, site)? {
                return Ok(Some(SeparableSite { site, projectors }));
            }
        }
    }
    Ok(None)
}

/// One Pauli letter per qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> CMat {
        match self {
            Pauli::I => CMat::identity(2, 2),
            Pauli::X => crate::linalg::pauli_x().into_matrix(),
            Pauli::Y => crate::linalg::pauli_y().into_matrix(),
            Pauli::Z => crate::linalg::pauli_z().into_matrix(),
        }
    }

    fn xz(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    fn from_char(ch: char) -> Option<Pauli> {
        Some(match ch {
            'I' => Pauli::I,
            'X' => Pauli::X,
            'Y' => Pauli::Y,
            'Z' => Pauli::Z,
            _ => return None,
        })
    }
}

/// A Hermitian Pauli word without sign.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliWord(pub Vec<Pauli>);

impl fmt::Display for PauliWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.0 {
            let ch = match p {
                Pauli::I => 'I',
                Pauli::X => 'X',
                Pauli::Y => 'Y',
                Pauli::Z => 'Z',
            };
            write!(f, "{ch}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for PauliWord {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.chars()
            .map(|ch| Pauli::from_char(ch).ok_or_else(|| format!("bad Pauli letter {ch:?}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(PauliWord)
    }
}

impl PauliWord {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn matrix(&self) -> CMat {
        let ms: Vec<CMat> = self.0.iter().map(|p| p.matrix()).collect();
        crate::linalg::kron_all(&ms)
    }

    /// Symplectic form: true when the words anticommute.
    pub fn anticommutes(&self, other: &PauliWord) -> bool {
        let mut odd = false;
        for (a, b) in self.0.iter().zip(&other.0) {
            let (x1, z1) = a.xz();
            let (x2, z2) = b.xz();
            odd ^= (x1 && z2) ^ (z1 && x2);
        }
        odd
    }
}

/// One term as coefficient × word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliTerm {
    pub id: TermId,
    pub coeff: f64,
    pub word: String,
}

/// Per-site basis changes and per-term Pauli words for a leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliForm {
    pub site_qubits: Vec<usize>,
    pub site_unitaries: Vec<CMat>,
    pub terms: Vec<PauliTerm>,
    /// Zero terms, left out.
    pub dropped: Vec<TermId>,
}

impl PauliForm {
    pub fn qubits(&self) -> usize {
        self.site_qubits.iter().sum()
    }

    pub fn words(&self) -> Vec<PauliWord> {
        self.terms.iter().map(|t| t.word.parse().expect("stored words are valid")).collect()
    }
}

type SignedWord = (f64, Vec<Pauli>);

// Site-local synthesis: unitary U and, per input, a sign and letters with
// U G U† = sign · word.
fn synthesize(gs: &[CMat], site: usize, eps: f64) -> Result<(CMat, Vec<SignedWord>)> {
    let d = gs.first().map_or(1, |g| g.nrows());
    let anti = |a: &CMat, b: &CMat| (a * b + b * a).norm() <= eps * (d as f64).sqrt() * 4.0;
    let mut pair = None;
    'outer: for a in 0..gs.len() {
        for b in a + 1..gs.len() {
            if anti(&gs[a], &gs[b]) {
                pair = Some((a, b));
                break 'outer;
            }
        }
    }
    let Some((a, b)) = pair else {
        // No anticommuting pair: everything must be ±I (a non-scalar one
        // would have invariant eigenspaces), and what is left are free qubits.
        if !d.is_power_of_two() {
            return Err(FactorizedError::NonPowerOfTwoBlock(site));
        }
        let free = d.trailing_zeros() as usize;
        let mut signs = Vec::with_capacity(gs.len());
        for g in gs {
            let s = g.trace().re / d as f64;
            if (g - CMat::identity(d, d) * c(s, 0.0)).norm() > eps * (d as f64).sqrt() * 4.0 {
                return Err(FactorizedError::SeparableSitePresent(site));
            }
            signs.push((s.signum(), vec![Pauli::I; free]));
        }
        return Ok((CMat::identity(d, d), signs));
    };
    if d % 2 != 0 {
        return Err(FactorizedError::NonPowerOfTwoBlock(site));
    }
    let h = d / 2;
    let eig = eig_hermitian_matrix(&gs[a]);
    let plus = eig.columns(|v| v > 0.0);
    if plus.ncols() != h {
        return Err(FactorizedError::NonPowerOfTwoBlock(site));
    }
    let e: Vec<CVec> = canonical_basis(&plus);
    let f: Vec<CVec> = e.iter().map(|v| &gs[b] * v).collect();
    let mut v = CMat::zeros(d, d);
    for k in 0..h {
        for col in 0..d {
            v[(k, col)] = e[k][col].conj();
            v[(h + k, col)] = f[k][col].conj();
        }
    }
    let mut rest = Vec::with_capacity(gs.len());
    let mut letters = Vec::with_capacity(gs.len());
    for (k, g) in gs.iter().enumerate() {
        let gp = &v * g * v.adjoint();
        let ca = !anti(g, &gs[a]);
        let cb = !anti(g, &gs[b]);
        let p = match (k == a, k == b, ca, cb) {
            (true, _, _, _) => Pauli::Z,
            (_, true, _, _) => Pauli::X,
            (_, _, true, true) => Pauli::I,
            (_, _, true, false) => Pauli::Z,
            (_, _, false, true) => Pauli::X,
            (_, _, false, false) => Pauli::Y,
        };
        // R = ½ tr_1[(P ⊗ I) G'].
        let pm = p.matrix();
        let r = CMat::from_fn(h, h, |i, j| {
            let mut s = C64::default();
            for x in 0..2 {
                for y in 0..2 {
                    s += pm[(x, y)] * gp[(y * h + i, x * h + j)];
                }
            }
            s * c(0.5, 0.0)
        });
        let back = crate::linalg::kron_all(&[pm, r.clone()]);
        if (&back - &gp).norm() > 1e-6 * (d as f64).sqrt() {
            return Err(FactorizedError::NonPowerOfTwoBlock(site));
        }
        rest.push((&r + r.adjoint()) * c(0.5, 0.0));
        letters.push(p);
    }
    let (u_rest, sub) = synthesize(&rest, site, eps)?;
    let lift = crate::linalg::kron_all(&[CMat::identity(2, 2), u_rest]);
    let u = lift * v;
    let out = letters
        .into_iter()
        .zip(sub)
        .map(|(p, (s, mut w))| {
            w.insert(0, p);
            (s, w)
        })
        .collect();
    Ok((u, out))
}

/// Pauli form of a factorized instance with no separable site and only
/// regular pairs.
pub fn to_pauli_form(inst: &Instance) -> Result<PauliForm> {
    for t in &inst.terms {
        if t.factors.is_none() {
            return Err(FactorizedError::NotFactorized(t.id));
        }
    }
    if let Some(s) = find_separable_factorized(inst)? {
        return Err(FactorizedError::SeparableSitePresent(s.site));
    }
    pauli_form_unchecked(inst)
}

pub(crate) fn pauli_form_unchecked(inst: &Instance) -> Result<PauliForm> {
    for m in all_modes(inst)? {
        if m.singular {
            return Err(FactorizedError::IrregularPair(m.a, m.b));
        }
    }
    let eps = inst.tol.eps_eq.max(1e-9) * 10.0;
    let live: Vec<&Term> = inst.terms.iter().filter(|t| !t.is_zero()).collect();
    let dropped: Vec<TermId> = inst.terms.iter().filter(|t| t.is_zero()).map(|t| t.id).collect();
    let mut coeff: BTreeMap<TermId, f64> = live.iter().map(|t| (t.id, 1.0)).collect();
    let mut site_words: Vec<BTreeMap<TermId, Vec<Pauli>>> = Vec::new();
    let mut site_qubits = Vec::new();
    let mut site_unitaries = Vec::new();
    for q in 0..inst.site_count() {
        let d = inst.dim(q);
        let on: Vec<&Term> = live.iter().copied().filter(|t| t.acts_on(q)).collect();
        let mut gs = Vec::with_capacity(on.len());
        for t in &on {
            let f = factor(t, q)?;
            let sq = f * f;
            let cq = sq.trace().re / d as f64;
            if cq <= 0.0 || (&sq - CMat::identity(d, d) * c(cq, 0.0)).norm() > eps * cq.max(1.0) * (d as f64).sqrt() {
                return Err(FactorizedError::NotInvolution { term: t.id, site: q });
            }
            let root = cq.sqrt();
            *coeff.get_mut(&t.id).expect("live term") *= root;
            gs.push(f / c(root, 0.0));
        }
        let m = d.trailing_zeros() as usize;
        if !d.is_power_of_two() {
            return Err(FactorizedError::NonPowerOfTwoBlock(q));
        }
        let (u, words) = if gs.is_empty() {
            // Untouched site: free qubits.
            (CMat::identity(d, d), Vec::new())
        } else {
            synthesize(&gs, q, eps)?
        };
        let mut map = BTreeMap::new();
        for (t, (s, w)) in on.iter().zip(words) {
            if w.len() != m {
                return Err(FactorizedError::NonPowerOfTwoBlock(q));
            }
            *coeff.get_mut(&t.id).expect("live term") *= s;
            map.insert(t.id, w);
        }
        site_words.push(map);
        site_qubits.push(m);
        site_unitaries.push(u);
    }
    let terms = live
        .iter()
        .map(|t| {
            let mut letters = Vec::new();
            for (q, words) in site_words.iter().enumerate() {
                match words.get(&t.id) {
                    Some(w) => letters.extend_from_slice(w),
                    None => letters.extend(vec![Pauli::I; site_qubits[q]]),
                }
            }
            PauliTerm {
                id: t.id,
                coeff: coeff[&t.id],
                word: PauliWord(letters).to_string(),
            }
        })
        .collect();
    Ok(PauliForm {
        site_qubits,
        site_unitaries,
        terms,
        dropped,
    })
}

/// Rebuild each term from its Pauli form and compare with the original
/// (restricted) matrix. Returns the worst relative Frobenius error.
pub fn pauli_round_trip_error(inst: &Instance, form: &PauliForm) -> f64 {
    let mut worst: f64 = 0.0;
    for pt in &form.terms {
        let t = inst.term(pt.id).expect("term in instance");
        let word: PauliWord = pt.word.parse().expect("valid word");
        let mut offset = 0;
        let mut mats = Vec::new();
        for (q, &m) in form.site_qubits.iter().enumerate() {
            let w = PauliWord(word.0[offset..offset + m].to_vec());
            offset += m;
            if t.acts_on(q) {
                let u = &form.site_unitaries[q];
                mats.push((q, u.adjoint() * w.matrix() * u));
            } else if w.0.iter().any(|p| *p != Pauli::I) {
                return f64::INFINITY;
            }
        }
        let ordered: Vec<CMat> = t
            .support
            .iter()
            .map(|s| mats.iter().find(|(q, _)| q == s).expect("support site").1.clone())
            .collect();
        let rebuilt = crate::linalg::kron_all(&ordered) * c(pt.coeff, 0.0);
        let err = (&rebuilt - t.matrix.matrix()).norm() / t.matrix.frobenius_norm().max(1.0);
        worst = worst.max(err);
    }
    worst
}

// Phase-tracked Pauli operator i^k X^x Z^z over GF(2) vectors.
#[derive(Clone, Debug)]
struct PhasedPauli {
    k: u8,
    x: Vec<bool>,
    z: Vec<bool>,
}

impl PhasedPauli {
    fn from_word(w: &PauliWord, sign: f64) -> Self {
        let mut k = if sign < 0.0 { 2 } else { 0 };
        let mut x = Vec::with_capacity(w.len());
        let mut z = Vec::with_capacity(w.len());
        for p in &w.0 {
            let (a, b) = p.xz();
            // Y = i X Z.
            if a && b {
                k += 1;
            }
            x.push(a);
            z.push(b);
        }
        PhasedPauli { k: k % 4, x, z }
    }

    fn mul(&self, o: &PhasedPauli) -> PhasedPauli {
        let mut k = self.k as usize + o.k as usize;
        for i in 0..self.x.len() {
            if self.z[i] && o.x[i] {
                k += 2;
            }
        }
        PhasedPauli {
            k: (k % 4) as u8,
            x: self.x.iter().zip(&o.x).map(|(a, b)| a ^ b).collect(),
            z: self.z.iter().zip(&o.z).map(|(a, b)| a ^ b).collect(),
        }
    }

    fn pivot(&self) -> Option<usize> {
        let n = self.x.len();
        (0..2 * n).find(|&i| if i < n { self.x[i] } else { self.z[i - n] })
    }

    fn bit(&self, i: usize) -> bool {
        let n = self.x.len();
        if i < n {
            self.x[i]
        } else {
            self.z[i - n]
        }
    }
}

/// Accept iff the words pairwise commute, every λ is ±1, offset + Σ a_h λ_h ≤ a,
/// and the group generated by {λ_h · word_h} does not contain -I.
pub fn stabilizer_verify(terms: &[PauliTerm], offset: f64, a: f64, eigenvalues: &BTreeMap<TermId, f64>) -> Result<bool> {
    let words: Vec<PauliWord> = terms
        .iter()
        .map(|t| t.word.parse().map_err(FactorizedError::BadLeaf))
        .collect::<Result<_>>()?;
    for i in 0..words.len() {
        if words[i].len() != words[0].len() {
            return Err(FactorizedError::BadLeaf("words of different lengths".into()));
        }
        for j in i + 1..words.len() {
            if words[i].anticommutes(&words[j]) {
                return Err(FactorizedError::NonCommutingWords(terms[i].id, terms[j].id));
            }
        }
    }
    let mut energy = offset;
    let mut scale = offset.abs();
    for t in terms {
        let l = *eigenvalues.get(&t.id).ok_or(FactorizedError::BadEigenvalueSign(t.id))?;
        if l != 1.0 && l != -1.0 {
            return Err(FactorizedError::BadEigenvalueSign(t.id));
        }
        energy += t.coeff * l;
        scale += t.coeff.abs();
    }
    if energy > a + 1e-9 * scale.max(1.0) {
        return Ok(false);
    }
    let gens: Vec<PhasedPauli> = terms
        .iter()
        .zip(&words)
        .map(|(t, w)| PhasedPauli::from_word(w, eigenvalues[&t.id]))
        .collect();
    Ok(excludes_minus_identity(&gens))
}

// Gaussian elimination with phase tracking; a generator that reduces to the
// identity must do so with phase +1.
fn excludes_minus_identity(gens: &[PhasedPauli]) -> bool {
    let mut rows: Vec<(usize, PhasedPauli)> = Vec::new();
    for g in gens {
        let mut r = g.clone();
        loop {
            match r.pivot() {
                None => {
                    if r.k != 0 {
                        return false;
                    }
                    break;
                }
                Some(p) => match rows.iter().find(|(q, _)| *q == p) {
                    Some((_, row)) => r = row.mul(&r),
                    None => {
                        // Keep the table reduced: clear this pivot from older rows.
                        for (_, old) in rows.iter_mut() {
                            if old.bit(p) {
                                *old = r.mul(old);
                            }
                        }
                        rows.push((p, r));
                        break;
                    }
                },
            }
        }
    }
    true
}

/// Lowest offset + Σ a_h λ_h over sign choices admitting a common
/// eigenstate. Free signs are those of an independent generating set;
/// the rest follow from the relations. Exhaustive over 2^rank choices.
pub fn stabilizer_ground_energy(
    terms: &[PauliTerm],
    offset: f64,
    budget: &mut Budget,
) -> Result<(f64, BTreeMap<TermId, f64>)> {
    let words: Vec<PauliWord> = terms
        .iter()
        .map(|t| t.word.parse().map_err(FactorizedError::BadLeaf))
        .collect::<Result<_>>()?;
    // Express each word as a product of earlier independent ones.
    let mut basis: Vec<(usize, PhasedPauli, Vec<bool>)> = Vec::new();
    let mut free: Vec<usize> = Vec::new();
    // For dependent terms: (term index, combination of free indices, phase k).
    let mut dependent: Vec<(usize, Vec<bool>, u8)> = Vec::new();
    for (h, w) in words.iter().enumerate() {
        let mut r = PhasedPauli::from_word(w, 1.0);
        let mut combo = vec![false; words.len()];
        combo[h] = true;
        loop {
            match r.pivot() {
                None => {
                    // Product of words in `combo` is i^k I; the relation is
                    // ∏ λ = i^{-k} restricted to ±1.
                    dependent.push((h, combo, r.k));
                    break;
                }
                Some(p) => match basis.iter().find(|(q, _, _)| *q == p) {
                    Some((_, row, rc)) => {
                        r = row.mul(&r);
                        for (x, y) in combo.iter_mut().zip(rc) {
                            *x ^= *y;
                        }
                    }
                    None => {
                        basis.push((p, r, combo));
                        free.push(h);
                        break;
                    }
                },
            }
        }
    }
    let mut best: Option<(f64, BTreeMap<TermId, f64>)> = None;
    let count = 1u64.checked_shl(free.len() as u32).unwrap_or(u64::MAX);
    for mask in 0..count {
        budget.tick()?;
        let mut lam = vec![1.0; terms.len()];
        for (bit, &h) in free.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                lam[h] = -1.0;
            }
        }
        let mut ok = true;
        for (h, combo, k) in &dependent {
            // ∏_{combo} λ_g · (i^k) = +1 is needed, with λ_h itself in combo.
            if k % 2 == 1 {
                ok = false;
                break;
            }
            let mut prod = if *k == 2 { -1.0 } else { 1.0 };
            for (g, &inside) in combo.iter().enumerate() {
                if inside && g != *h {
                    prod *= lam[g];
                }
            }
            // λ_h · prod = 1.
            lam[*h] = prod;
        }
        if !ok {
            continue;
        }
        let e: f64 = offset + terms.iter().zip(&lam).map(|(t, l)| t.coeff * l).sum::<f64>();
        let better = match &best {
            None => true,
            Some((b, _)) => e < *b - 1e-12,
        };
        if better {
            best = Some((e, terms.iter().zip(&lam).map(|(t, &l)| (t.id, l)).collect()));
        }
    }
    best.ok_or_else(|| FactorizedError::BadLeaf("no consistent sign assignment".into()))
}

/// A leaf subspace ⊗_q range(Q_q) and its Pauli form.
#[derive(Clone, Debug)]
pub struct Leaf {
    pub site_projectors: Vec<CMat>,
    pub instance: Instance,
    pub form: PauliForm,
}

#[derive(Clone, Debug)]
pub struct SimpleSubspaceTree {
    pub leaves: Vec<Leaf>,
    pub depth: usize,
}

/// Restrict the original instance to ⊗_q range(Q_q) using canonical isometries.
pub fn restrict_to_leaf(inst: &Instance, projectors: &[CMat]) -> Result<Instance> {
    if projectors.len() != inst.site_count() {
        return Err(FactorizedError::BadLeaf("one projector per site is required".into()));
    }
    let mut cur = inst.clone();
    for (q, p) in projectors.iter().enumerate() {
        if p.nrows() != inst.dim(q) || p.ncols() != inst.dim(q) {
            return Err(FactorizedError::BadLeaf(format!("projector for site {q} has the wrong size")));
        }
        let d = inst.dim(q);
        if (p - CMat::identity(d, d)).norm() <= 1e-12 {
            continue;
        }
        cur = restrict_site(&cur, q, p, None);
    }
    Ok(cur)
}

/// Split on separable sites until none is left; each leaf gets a Pauli form.
pub fn build_subspace_tree(inst: &Instance, budget: &mut Budget) -> Result<SimpleSubspaceTree> {
    for t in &inst.terms {
        if t.factors.is_none() {
            return Err(FactorizedError::NotFactorized(t.id));
        }
    }
    let isos: Vec<CMat> = inst.qudit_dims.iter().map(|&d| CMat::identity(d, d)).collect();
    let mut leaves = Vec::new();
    let mut depth = 0;
    grow(inst, inst.clone(), isos, 0, budget, &mut leaves, &mut depth)?;
    Ok(SimpleSubspaceTree { leaves, depth })
}

fn grow(
    root: &Instance,
    cur: Instance,
    isos: Vec<CMat>,
    level: usize,
    budget: &mut Budget,
    leaves: &mut Vec<Leaf>,
    depth: &mut usize,
) -> Result<()> {
    budget.tick()?;
    *depth = (*depth).max(level);
    match find_separable_factorized(&cur)? {
        Some(sep) => {
            for p in &sep.projectors {
                let v = canonical_isometry(p);
                let child = restrict_site(&cur, sep.site, p, None);
                let mut child_isos = isos.clone();
                child_isos[sep.site] = &isos[sep.site] * v;
                grow(root, child, child_isos, level + 1, budget, leaves, depth)?;
            }
            Ok(())
        }
        None => {
            let projs: Vec<CMat> = isos.iter().map(|v| v * v.adjoint()).collect();
            let instance = restrict_to_leaf(root, &projs)?;
            let form = pauli_form_unchecked(&instance)?;
            leaves.push(Leaf {
                site_projectors: projs,
                instance,
                form,
            });
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{pauli_x, pauli_z, Tolerance};
    use crate::model::{Boundary, Carrier, Lattice2D};

    fn toric_factorized() -> Instance {
        let base = crate::model::toric_code_2x2();
        let x = pauli_x().into_matrix();
        let z = pauli_z().into_matrix();
        let terms = base
            .lattice
            .cells()
            .iter()
            .enumerate()
            .map(|(k, cell)| {
                let f = if cell.kind == crate::model::CellKind::Star { &x } else { &z };
                Term::factorized(k as u64, cell.sites.clone(), vec![f.clone(); 4])
            })
            .collect();
        Instance::new(base.lattice, base.qudit_dims.clone(), terms, Tolerance::default())
    }

    #[test]
    fn toric_modes_are_regular() {
        let inst = toric_factorized();
        inst.validate().unwrap();
        let modes = all_modes(&inst).unwrap();
        assert!(modes.iter().all(|m| !m.singular));
        assert!(modes
            .iter()
            .any(|m| m.sites.len() == 2 && m.sites.iter().all(|(_, r)| *r == SiteRelation::Dash(-1))));
    }

    #[test]
    fn toric_pauli_form() {
        let inst = toric_factorized();
        assert!(find_separable_factorized(&inst).unwrap().is_none());
        let form = to_pauli_form(&inst).unwrap();
        assert_eq!(form.site_qubits, vec![1; 8]);
        for u in &form.site_unitaries {
            assert!((u - CMat::identity(2, 2)).norm() < 1e-12);
        }
        assert!(pauli_round_trip_error(&inst, &form) < 1e-12);
        let tree = build_subspace_tree(&inst, &mut Budget::default()).unwrap();
        assert_eq!(tree.leaves.len(), 1);
        let (e, _) = stabilizer_ground_energy(&form.terms, 0.0, &mut Budget::default()).unwrap();
        assert!((e + 8.0).abs() < 1e-12);
    }

    #[test]
    fn toric_projected_energy_accepts() {
        let inst = toric_factorized();
        let form = to_pauli_form(&inst).unwrap();
        // H = Σ (I - s)/2 = 4 - Σ s/2.
        let half: Vec<PauliTerm> = form.terms.iter().map(|t| PauliTerm { coeff: -0.5, ..t.clone() }).collect();
        let lam = half.iter().map(|t| (t.id, 1.0)).collect();
        assert!(stabilizer_verify(&half, 4.0, 0.0, &lam).unwrap());
    }

    #[test]
    fn contradictory_generators_reject() {
        let t = |id, coeff, w: &str| PauliTerm { id, coeff, word: w.into() };
        let terms = vec![t(0, 1.0, "Z"), t(1, -1.0, "Z")];
        let lam: BTreeMap<_, _> = [(0, 1.0), (1, -1.0)].into_iter().collect();
        // Generators +Z and -Z: -I is in the group.
        assert!(!stabilizer_verify(&terms, 0.0, 10.0, &lam).unwrap());
        let one = vec![t(0, 1.0, "X")];
        let lam: BTreeMap<_, _> = [(0, -1.0)].into_iter().collect();
        assert!(stabilizer_verify(&one, 0.0, -1.0, &lam).unwrap());
        let lam: BTreeMap<_, _> = [(0, 0.5)].into_iter().collect();
        assert!(matches!(stabilizer_verify(&one, 0.0, 0.0, &lam), Err(FactorizedError::BadEigenvalueSign(0))));
        let bad = vec![t(0, 1.0, "X"), t(1, 1.0, "Z")];
        let lam: BTreeMap<_, _> = [(0, 1.0), (1, 1.0)].into_iter().collect();
        assert!(matches!(stabilizer_verify(&bad, 0.0, 5.0, &lam), Err(FactorizedError::NonCommutingWords(0, 1))));
    }

    #[test]
    fn zero_cross_pair_is_singular_and_separable() {
        let lat = Lattice2D::new(2, 2, Boundary::Open, Carrier::Vertices);
        let p0 = CMat::from_diagonal(&CVec::from_vec(vec![c(1., 0.), c(0., 0.)]));
        let p1 = CMat::from_diagonal(&CVec::from_vec(vec![c(0., 0.), c(1., 0.)]));
        let a = Term::factorized(0, vec![0, 1], vec![p0, pauli_x().into_matrix()]);
        let b = Term::factorized(1, vec![0, 1], vec![p1, pauli_z().into_matrix() + pauli_x().into_matrix()]);
        let inst = Instance::new(lat, vec![2; 4], vec![a.clone(), b.clone()], Tolerance::default());
        inst.validate().unwrap();
        let m = commute_mode(&inst, &a, &b).unwrap();
        assert_eq!(m.sites[0].1, SiteRelation::Zero);
        assert_eq!(m.sites[1].1, SiteRelation::Cross);
        assert!(m.singular);
        let sep = find_separable_factorized(&inst).unwrap().unwrap();
        assert_eq!(sep.site, 0);
    }

    #[test]
    fn conjugated_paulis_recovered() {
        // Two 4-dim sites; each term is the same two-qubit word on both
        // sites, so overlapping terms anticommute twice and commute overall.
        let lat = Lattice2D::new(2, 2, Boundary::Open, Carrier::Vertices);
        let (x, z) = (pauli_x().into_matrix(), pauli_z().into_matrix());
        let i2 = CMat::identity(2, 2);
        let mut rng = 7u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut unitary = || CMat::from_fn(4, 4, |_, _| c(next(), next())).qr().q();
        let us = [unitary(), unitary()];
        let words = [x.kronecker(&i2), z.kronecker(&z), i2.kronecker(&x), i2.kronecker(&z)];
        let terms = words
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let fs = us.iter().map(|u| u * w * u.adjoint()).collect();
                Term::factorized(k as u64, vec![0, 1], fs)
            })
            .collect();
        let inst = Instance::new(lat, vec![4, 4, 1, 1], terms, Tolerance::default());
        inst.validate().unwrap();
        let form = to_pauli_form(&inst).unwrap();
        assert_eq!(form.site_qubits, vec![2, 2, 0, 0]);
        assert!(pauli_round_trip_error(&inst, &form) < 1e-9);
        let (e, lam) = stabilizer_ground_energy(&form.terms, 0.0, &mut Budget::default()).unwrap();
        assert!(stabilizer_verify(&form.terms, 0.0, e, &lam).unwrap());
        let dense = crate::linalg::hermitian_eig(
            &inst.terms.iter().fold(Operator::zeros(16), |acc, t| acc.add(&t.matrix)),
            &inst.tol,
        )
        .unwrap();
        assert!((dense.values[0] - e).abs() < 1e-9);
    }
}
