//! Semi-separable sites and the dimension-reducing self-reduction.
//!
//! A site is semi-separable when its space splits as ⊕_j H_j with every
//! term but at most one (the exempt term) keeping each H_j invariant.
//! Restricting to one block and rounding the exempt term to the projector
//! onto the 1-eigenspace of its compression preserves frustration-freeness
//! for at least one block.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{
    self, generate_algebra, induced_algebra, structure_decompose, AlgebraError, BlockDecomposition,
};
use crate::budget::{Budget, BudgetExceeded};
use crate::linalg::{
    apply_local_left, c, canonical_isometry, compress_local, eig_hermitian_matrix, scale_of, CMat, Operator,
    Tolerance,
};
use crate::model::{Instance, ModelError, Term, TermId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),
    #[error("reduce step {index} is invalid: {reason}")]
    InvalidStep { index: usize, reason: String },
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Budget(#[from] BudgetExceeded),
}

pub type Result<T> = std::result::Result<T, ReductionError>;

/// A decomposition of one site kept invariant by all terms but `exempt_term`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiSepCertificate {
    pub site: usize,
    #[serde(with = "matrix_list")]
    pub projectors: Vec<CMat>,
    pub exempt_term: Option<TermId>,
    pub chosen_block: Option<usize>,
}

pub(crate) mod matrix_list {
    use super::CMat;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ms: &[CMat], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<serde_json::Value> = ms.iter().map(crate::model::matrix_to_json).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CMat>, D::Error> {
        let v: Vec<serde_json::Value> = Vec::deserialize(d)?;
        v.iter()
            .map(|x| crate::model::matrix_from_json(x).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ReductionTrace {
    pub steps: Vec<SemiSepCertificate>,
    pub final_instance: Instance,
}

/// ||[t, P_q]||_F for a term and a projector on one of its sites.
pub fn site_commutator_norm(inst: &Instance, t: &Term, site: usize, p: &CMat) -> f64 {
    let Some(pos) = t.position(site) else {
        return 0.0;
    };
    let dims = inst.dims_of(&t.support);
    // P t and t P = (P t)† for Hermitian t, P.
    let pt = apply_local_left(t.matrix.matrix(), &dims, pos, p);
    (&pt - pt.adjoint()).norm()
}

fn keeps_invariant(inst: &Instance, t: &Term, site: usize, projs: &[CMat]) -> bool {
    let scale = scale_of(t.matrix.frobenius_norm());
    projs
        .iter()
        .all(|p| site_commutator_norm(inst, t, site, p) <= inst.tol.eps_eq * scale)
}

// Finest decomposition kept invariant by every term on the site: minimal
// projections of the commutant of the algebra all terms induce there.
pub(crate) fn separable_split(inst: &Instance, site: usize) -> Result<Option<Vec<CMat>>> {
    let d = inst.dim(site);
    let mut gens = Vec::new();
    for k in inst.terms_on(site) {
        let alg = induced_algebra(inst, &inst.terms[k], site)?;
        gens.extend(alg.basis);
    }
    let joint = generate_algebra(&gens, d, &inst.tol);
    if joint.is_full() {
        return Ok(None);
    }
    let comm = algebra::commutant(&joint.basis, d, &inst.tol);
    let dec = structure_decompose(&comm, &inst.tol)?;
    Ok(Some(minimal_projections(&dec)))
}

/// U_i† (|k⟩⟨k| ⊗ I) U_i over every block i and k < d1.
pub fn minimal_projections(dec: &BlockDecomposition) -> Vec<CMat> {
    let mut out = Vec::new();
    for b in &dec.blocks {
        for k in 0..b.d1 {
            let rows = b.unitary.rows(k * b.d2, b.d2).into_owned();
            out.push(rows.adjoint() * rows);
        }
    }
    out
}

/// First semi-separable site in ascending site order, or None.
pub fn find_semi_separable(inst: &Instance) -> Result<Option<SemiSepCertificate>> {
    for site in 0..inst.site_count() {
        if let Some(cert) = semi_separable_at(inst, site)? {
            return Ok(Some(cert));
        }
    }
    Ok(None)
}

/// Candidate certificate at one site: induced-algebra decompositions of each
/// term first, then the separable split shared by all terms.
pub fn semi_separable_at(inst: &Instance, site: usize) -> Result<Option<SemiSepCertificate>> {
    if inst.dim(site) < 2 {
        return Ok(None);
    }
    let on = inst.terms_on(site);
    for &k in &on {
        let t = &inst.terms[k];
        let alg = induced_algebra(inst, t, site)?;
        if alg.is_trivial() {
            continue;
        }
        let dec = structure_decompose(&alg, &inst.tol)?;
        if dec.blocks.len() < 2 {
            continue;
        }
        let projs = dec.projectors();
        let violators: Vec<TermId> = on
            .iter()
            .filter(|&&o| o != k && !keeps_invariant(inst, &inst.terms[o], site, &projs))
            .map(|&o| inst.terms[o].id)
            .collect();
        if violators.len() <= 1 {
            return Ok(Some(SemiSepCertificate {
                site,
                projectors: projs,
                exempt_term: violators.first().copied(),
                chosen_block: None,
            }));
        }
    }
    if let Some(projs) = separable_split(inst, site)? {
        return Ok(Some(SemiSepCertificate {
            site,
            projectors: projs,
            exempt_term: None,
            chosen_block: None,
        }));
    }
    Ok(None)
}

/// Check a certificate's invariants against an instance.
pub fn check_certificate(inst: &Instance, cert: &SemiSepCertificate) -> Result<()> {
    let bad = |m: String| Err(ReductionError::InvalidCertificate(m));
    if cert.site >= inst.site_count() {
        return bad(format!("site {} out of range", cert.site));
    }
    let d = inst.dim(cert.site);
    if cert.projectors.len() < 2 {
        return bad("a decomposition needs at least two blocks".into());
    }
    let eps = inst.tol.eps_eq;
    let mut sum = CMat::zeros(d, d);
    for (i, p) in cert.projectors.iter().enumerate() {
        if p.nrows() != d || p.ncols() != d {
            return bad(format!("projector {i} is not {d}x{d}"));
        }
        let op = Operator::from_matrix(p.clone()).map_err(ModelError::from)?;
        if !op.is_projection(&inst.tol) || p.norm() < 0.5 {
            return bad(format!("projector {i} is not a nonzero projection"));
        }
        for (j, q) in cert.projectors.iter().enumerate().skip(i + 1) {
            if (p * q).norm() > eps {
                return bad(format!("projectors {i} and {j} are not orthogonal"));
            }
        }
        sum += p;
    }
    if (sum - CMat::identity(d, d)).norm() > eps * scale_of((d as f64).sqrt()) {
        return bad("projectors do not sum to the identity".into());
    }
    if let Some(e) = cert.exempt_term {
        if inst.term(e).is_none() {
            return bad(format!("exempt term {e} does not exist"));
        }
    }
    for k in inst.terms_on(cert.site) {
        let t = &inst.terms[k];
        if Some(t.id) == cert.exempt_term {
            continue;
        }
        if !keeps_invariant(inst, t, cert.site, &cert.projectors) {
            return bad(format!("term {} does not keep the decomposition invariant", t.id));
        }
    }
    if let Some(j) = cert.chosen_block {
        if j >= cert.projectors.len() {
            return bad(format!("block {j} out of range"));
        }
    }
    Ok(())
}

/// The j-th reduced Hamiltonian: the site is restricted to range(Π_j), every
/// term compressed, and the exempt term rounded to the projector onto the
/// 1-eigenspace of its compression (zero when that eigenspace is empty).
pub fn reduced_hamiltonian(inst: &Instance, cert: &SemiSepCertificate, j: usize) -> Result<Instance> {
    check_certificate(inst, cert)?;
    let p = cert
        .projectors
        .get(j)
        .ok_or_else(|| ReductionError::InvalidCertificate(format!("block {j} out of range")))?;
    Ok(restrict_site(inst, cert.site, p, cert.exempt_term))
}

/// Restrict without re-checking the certificate.
pub(crate) fn restrict_site(inst: &Instance, site: usize, p: &CMat, exempt: Option<TermId>) -> Instance {
    let v = canonical_isometry(p);
    let mut out = inst.clone();
    out.qudit_dims[site] = v.ncols();
    let one = 1.0 - inst.tol.eps_rank;
    for t in out.terms.iter_mut() {
        let Some(pos) = t.position(site) else { continue };
        let dims = inst.dims_of(&t.support);
        let m = compress_local(t.matrix.matrix(), &dims, pos, &v);
        let m = (&m + m.adjoint()) * c(0.5, 0.0);
        let m = if Some(t.id) == exempt {
            let eig = eig_hermitian_matrix(&m);
            eig.projector(|x| x >= one)
        } else {
            m
        };
        let factors = match (&t.factors, Some(t.id) == exempt) {
            (Some(fs), false) => Some(
                fs.iter()
                    .enumerate()
                    .map(|(k, f)| {
                        if k == pos {
                            Operator::from_matrix(v.adjoint() * f.matrix() * &v)
                                .expect("square")
                                .with_support(f.support().to_vec())
                        } else {
                            f.clone()
                        }
                    })
                    .collect(),
            ),
            _ => None,
        };
        // A factor compressed to numerical zero kills the whole product;
        // make it exact so later stages see a zero term.
        let vanished = factors.as_ref().is_some_and(|fs: &Vec<Operator>| {
            let before = t.factors.as_ref().expect("factored")[pos].frobenius_norm();
            fs[pos].frobenius_norm() <= inst.tol.eps_rank * before.max(1.0)
        });
        let (m, factors) = if vanished {
            let fs: Vec<Operator> = factors
                .expect("factored")
                .iter()
                .map(|f| Operator::zeros(f.dim()).with_support(f.support().to_vec()))
                .collect();
            (CMat::zeros(m.nrows(), m.ncols()), Some(fs))
        } else {
            (m, factors)
        };
        t.matrix = Operator::from_matrix(m).expect("square").with_support(t.support.clone());
        t.factors = factors;
    }
    out
}

/// Block indices by decreasing dimension, ties in index order.
pub fn block_order(projs: &[CMat]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..projs.len()).collect();
    let rank = |p: &CMat| p.trace().re.round() as i64;
    idx.sort_by_key(|&i| -rank(&projs[i]));
    idx
}

/// Prover mode: depth-first over blocks until `leaf` accepts a fixpoint
/// instance. Returns the applied steps (with chosen blocks) and the leaf's value.
#[allow(clippy::type_complexity)]
pub fn prove_reduction<T, E: From<ReductionError>>(
    inst: &Instance,
    budget: &mut Budget,
    leaf: &mut dyn FnMut(&Instance, &mut Budget) -> std::result::Result<Option<T>, E>,
) -> std::result::Result<Option<(Vec<SemiSepCertificate>, Instance, T)>, E> {
    budget.tick().map_err(ReductionError::from)?;
    match find_semi_separable(inst)? {
        None => Ok(leaf(inst, budget)?.map(|v| (Vec::new(), inst.clone(), v))),
        Some(cert) => {
            for j in block_order(&cert.projectors) {
                let child = restrict_site(inst, cert.site, &cert.projectors[j], cert.exempt_term);
                if let Some((mut rest, fin, v)) = prove_reduction(&child, budget, leaf)? {
                    let mut step = cert.clone();
                    step.chosen_block = Some(j);
                    rest.insert(0, step);
                    return Ok(Some((rest, fin, v)));
                }
            }
            Ok(None)
        }
    }
}

/// Verifier mode: replay the steps, validating each, and require that the
/// final instance has no semi-separable site.
pub fn reduce_to_fixpoint(inst: &Instance, steps: &[SemiSepCertificate]) -> Result<ReductionTrace> {
    let mut cur = inst.clone();
    for (index, step) in steps.iter().enumerate() {
        let invalid = |reason: String| ReductionError::InvalidStep { index, reason };
        let j = step.chosen_block.ok_or_else(|| invalid("no block chosen".into()))?;
        check_certificate(&cur, step).map_err(|e| invalid(e.to_string()))?;
        let before = cur.dim(step.site);
        cur = restrict_site(&cur, step.site, &step.projectors[j], step.exempt_term);
        if cur.dim(step.site) >= before {
            return Err(invalid("site dimension did not decrease".into()));
        }
    }
    if let Some(cert) = find_semi_separable(&cur)? {
        return Err(ReductionError::InvalidStep {
            index: steps.len(),
            reason: format!("site {} is still semi-separable after the last step", cert.site),
        });
    }
    Ok(ReductionTrace {
        steps: steps.to_vec(),
        final_instance: cur,
    })
}

/// Pairwise check that the terms are commuting projections, for tests and
/// for the verifier's sanity checks on intermediate instances.
pub fn is_commuting_projection_family(inst: &Instance, tol: &Tolerance) -> bool {
    inst.terms.iter().all(|t| t.matrix.is_projection(tol)) && crate::model::check_commuting(inst).pass
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron_all, pauli_x};
    use crate::model::{toric_code_2x2, Boundary, Carrier, Lattice2D};

    fn ket(d: usize, k: usize) -> CMat {
        let mut m = CMat::zeros(d, d);
        m[(k, k)] = c(1.0, 0.0);
        m
    }

    #[test]
    fn toric_code_has_no_semi_separable_site() {
        assert!(find_semi_separable(&toric_code_2x2()).unwrap().is_none());
        let tr = reduce_to_fixpoint(&toric_code_2x2(), &[]).unwrap();
        assert!(tr.steps.is_empty());
    }

    #[test]
    fn diagonal_term_gives_separable_certificate() {
        let lat = Lattice2D::new(2, 2, Boundary::Open, Carrier::Vertices);
        let p = kron_all(&[ket(2, 0), ket(2, 0), ket(2, 0), ket(2, 0)]);
        let inst = Instance::new(lat, vec![2; 4], vec![Term::new(0, vec![0, 1, 2, 3], p)], Tolerance::default());
        let cert = find_semi_separable(&inst).unwrap().unwrap();
        assert_eq!(cert.site, 0);
        assert_eq!(cert.exempt_term, None);
        assert_eq!(cert.projectors.len(), 2);
        assert!((cert.projectors[0][(0, 0)].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rounding_examples() {
        let lat = Lattice2D::new(1, 2, Boundary::Open, Carrier::Vertices);
        let plus = CMat::from_element(2, 2, c(0.5, 0.0));
        let a = ket(2, 1);
        // h0 = |+⟩⟨+| ⊗ A; the other term fixes the {|0⟩, |1⟩} split.
        let h0 = Term::new(0, vec![0, 1], kron_all(&[plus, a.clone()]));
        let z = Term::new(1, vec![0], ket(2, 0));
        let inst = Instance::new(lat, vec![2, 2], vec![h0, z], Tolerance::default());
        let cert = SemiSepCertificate {
            site: 0,
            projectors: vec![ket(2, 0), ket(2, 1)],
            exempt_term: Some(0),
            chosen_block: None,
        };
        let red = reduced_hamiltonian(&inst, &cert, 0).unwrap();
        assert_eq!(red.qudit_dims, vec![1, 2]);
        assert_eq!(red.terms[0].matrix.frobenius_norm(), 0.0);

        let h0 = Term::new(0, vec![0, 1], kron_all(&[ket(2, 0), a.clone()]));
        let inst = Instance::new(lat, vec![2, 2], vec![h0, Term::new(1, vec![0], ket(2, 0))], Tolerance::default());
        let red = reduced_hamiltonian(&inst, &cert, 0).unwrap();
        assert!((red.terms[0].matrix.matrix() - &a).norm() < 1e-12);
    }

    #[test]
    fn two_violators_are_rejected() {
        let lat = Lattice2D::new(1, 2, Boundary::Open, Carrier::Vertices);
        let x = (CMat::identity(2, 2) + pauli_x().into_matrix()) * c(0.5, 0.0);
        let terms = vec![Term::new(0, vec![0], x.clone()), Term::new(1, vec![0, 1], kron_all(&[x, ket(2, 0)]))];
        let inst = Instance::new(lat, vec![2, 2], terms, Tolerance::default());
        let cert = SemiSepCertificate {
            site: 0,
            projectors: vec![ket(2, 0), ket(2, 1)],
            exempt_term: None,
            chosen_block: Some(0),
        };
        assert!(matches!(check_certificate(&inst, &cert), Err(ReductionError::InvalidCertificate(_))));
        assert!(matches!(
            reduce_to_fixpoint(&inst, &[cert]),
            Err(ReductionError::InvalidStep { index: 0, .. })
        ));
    }
}
