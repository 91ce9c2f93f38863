//! The clh-witness/v1 certificate format and its verifier.
//!
//! The verifier only touches per-term and per-site matrices; it never builds
//! the global Hamiltonian.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factorized::{self, pauli_round_trip_error, stabilizer_verify, PauliForm, PauliTerm};
use crate::linalg::CMat;
use crate::model::{projection_reduce, Instance, ProjectionWitness, TermId};
use crate::reduction::{reduce_to_fixpoint, site_commutator_norm, ReductionError, SemiSepCertificate};
use crate::removal::{eliminate_and_contract, eps_pos, tag_sites, TagKind};

pub const WITNESS_FORMAT: &str = "clh-witness/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Step {
    /// Eigenvalue choice per term; terms become I - Π_λ.
    Project {
        #[serde(with = "id_map")]
        eigenvalues: BTreeMap<TermId, f64>,
    },
    Reduce {
        site: usize,
        #[serde(with = "crate::reduction::matrix_list")]
        projectors: Vec<CMat>,
        exempt_term: Option<TermId>,
        chosen_block: usize,
    },
    /// Block pair for an R1 site.
    Remove { site: usize, block_i: usize, block_j: usize },
    /// Marks an R2 site (eliminated in closed form).
    Split { site: usize },
    /// Factorized route: one leaf of the subspace tree and its Pauli form.
    Leaf {
        #[serde(with = "crate::reduction::matrix_list")]
        site_projectors: Vec<CMat>,
        #[serde(with = "crate::reduction::matrix_list")]
        site_unitaries: Vec<CMat>,
        pauli_words: Vec<PauliTerm>,
        #[serde(with = "id_map")]
        eigenvalues: BTreeMap<TermId, f64>,
    },
}

// Term-id keyed maps as JSON objects. Internally tagged enums buffer their
// content, which loses serde_json's integer-key coercion, so keys are parsed
// here.
mod id_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::model::TermId;

    pub fn serialize<S: Serializer>(m: &BTreeMap<TermId, f64>, s: S) -> Result<S::Ok, S::Error> {
        let v: BTreeMap<String, f64> = m.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<TermId, f64>, D::Error> {
        let v: BTreeMap<String, f64> = BTreeMap::deserialize(d)?;
        v.into_iter()
            .map(|(k, x)| {
                k.parse::<TermId>()
                    .map(|k| (k, x))
                    .map_err(|_| serde::de::Error::custom(format!("bad term id {k:?}")))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub format: String,
    /// The claimed bound: λ(H) ≤ threshold.
    pub threshold: f64,
    pub steps: Vec<Step>,
}

impl Witness {
    pub fn new(threshold: f64, steps: Vec<Step>) -> Self {
        Witness {
            format: WITNESS_FORMAT.to_string(),
            threshold,
            steps,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, WitnessError> {
        let w: Witness = serde_json::from_str(text).map_err(|e| WitnessError::Parse(e.to_string()))?;
        if w.format != WITNESS_FORMAT {
            return Err(WitnessError::BadFormat(w.format));
        }
        Ok(w)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn is_factorized(&self) -> bool {
        matches!(self.steps.first(), Some(Step::Leaf { .. }))
    }
}

/// Malformed input, as opposed to a witness that fails to check.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WitnessError {
    #[error("cannot parse witness: {0}")]
    Parse(String),
    #[error("unknown witness format {0:?}, expected \"clh-witness/v1\"")]
    BadFormat(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Rejection {
    /// Index into `steps`, when one step is at fault.
    pub step: Option<usize>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub accept: bool,
    pub route: &'static str,
    /// Σλ (projection route) or the stabilizer energy (factorized route).
    pub energy: Option<f64>,
    /// The selected summand of tr ∏(I - p) (projection route).
    pub summand: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection: Option<Rejection>,
}

fn reject(route: &'static str, step: Option<usize>, reason: impl Into<String>) -> VerifyReport {
    VerifyReport {
        accept: false,
        route,
        energy: None,
        summand: None,
        rejection: Some(Rejection {
            step,
            reason: reason.into(),
        }),
    }
}

/// Slack on the energy comparison.
pub fn energy_slack(a: f64) -> f64 {
    1e-8 * a.abs().max(1.0)
}

/// Check a witness against an instance. `factorized` selects the route
/// explicitly; otherwise it follows the first step.
pub fn verify(inst: &Instance, w: &Witness, factorized: Option<bool>) -> VerifyReport {
    let leaf_route = factorized.unwrap_or_else(|| w.is_factorized());
    if leaf_route {
        verify_leaf(inst, w)
    } else {
        verify_projection(inst, w)
    }
}

fn verify_projection(inst: &Instance, w: &Witness) -> VerifyReport {
    const ROUTE: &str = "projection";
    let Some(Step::Project { eigenvalues }) = w.steps.first() else {
        return reject(ROUTE, Some(0), "the first step must be a project step");
    };
    let pw = ProjectionWitness {
        eigenvalues: eigenvalues.clone(),
    };
    let (reduced, total) = match projection_reduce(inst, &pw) {
        Ok(r) => r,
        Err(e) => return reject(ROUTE, Some(0), e.to_string()),
    };
    if total > w.threshold + energy_slack(w.threshold) {
        return reject(ROUTE, Some(0), format!("eigenvalue sum {total} exceeds the threshold {}", w.threshold));
    }
    let mut k = 1;
    let mut certs = Vec::new();
    while let Some(Step::Reduce {
        site,
        projectors,
        exempt_term,
        chosen_block,
    }) = w.steps.get(k)
    {
        certs.push(SemiSepCertificate {
            site: *site,
            projectors: projectors.clone(),
            exempt_term: *exempt_term,
            chosen_block: Some(*chosen_block),
        });
        k += 1;
    }
    let trace = match reduce_to_fixpoint(&reduced, &certs) {
        Ok(t) => t,
        Err(ReductionError::InvalidStep { index, reason }) => {
            return reject(ROUTE, Some(index + 1), format!("reduce step is invalid: {reason}"))
        }
        Err(e) => return reject(ROUTE, None, e.to_string()),
    };
    let fin = trace.final_instance;
    let tags = match tag_sites(&fin) {
        Ok(t) => t,
        Err(e) => return reject(ROUTE, None, e.to_string()),
    };
    let mut choice = BTreeMap::new();
    let mut split_sites = Vec::new();
    for (idx, step) in w.steps.iter().enumerate().skip(k) {
        match step {
            Step::Remove { site, block_i, block_j } => {
                let ok = tags.get(*site).is_some_and(|t| t.kind == TagKind::R1);
                if !ok || choice.insert(*site, (*block_i, *block_j)).is_some() {
                    return reject(ROUTE, Some(idx), format!("site {site} is not an unclaimed R1 site"));
                }
            }
            Step::Split { site } => {
                let ok = tags.get(*site).is_some_and(|t| t.kind == TagKind::R2);
                if !ok || split_sites.contains(site) {
                    return reject(ROUTE, Some(idx), format!("site {site} is not an unclaimed R2 site"));
                }
                split_sites.push(*site);
            }
            _ => return reject(ROUTE, Some(idx), "only remove and split steps may follow the reduction"),
        }
    }
    if let Some(t) = tags.iter().find(|t| t.kind == TagKind::R2 && !split_sites.contains(&t.site)) {
        return reject(ROUTE, None, format!("R2 site {} has no split step", t.site));
    }
    let value = match eliminate_and_contract(&fin, &tags, &choice) {
        Ok(v) => v,
        Err(e) => return reject(ROUTE, None, e.to_string()),
    };
    let cut = eps_pos(&fin);
    VerifyReport {
        accept: value > cut,
        route: ROUTE,
        energy: Some(total),
        summand: Some(value),
        rejection: (value <= cut).then(|| Rejection {
            step: None,
            reason: format!("selected summand {value:e} is not above eps_pos = {cut:e}"),
        }),
    }
}

fn is_projector(p: &CMat, eps: f64) -> bool {
    let n = p.nrows();
    p.ncols() == n
        && (p - p.adjoint()).norm() <= eps * (n as f64).sqrt().max(1.0)
        && (p * p - p).norm() <= eps * (n as f64).sqrt().max(1.0)
        && p.trace().re > 0.5
}

fn verify_leaf(inst: &Instance, w: &Witness) -> VerifyReport {
    const ROUTE: &str = "factorized";
    let [Step::Leaf {
        site_projectors,
        site_unitaries,
        pauli_words,
        eigenvalues,
    }] = w.steps.as_slice()
    else {
        return reject(ROUTE, None, "the factorized route takes exactly one leaf step");
    };
    if !inst.is_factorized() && !inst.terms.is_empty() {
        return reject(ROUTE, None, "the instance is not factorized");
    }
    if site_projectors.len() != inst.site_count() || site_unitaries.len() != inst.site_count() {
        return reject(ROUTE, Some(0), "one projector and one unitary per site are required");
    }
    let eps = 1e-8;
    for (q, p) in site_projectors.iter().enumerate() {
        if p.nrows() != inst.dim(q) || !is_projector(p, eps) {
            return reject(ROUTE, Some(0), format!("site {q}: not a nonzero projector of the site dimension"));
        }
        for &k in &inst.terms_on(q) {
            let t = &inst.terms[k];
            let scale = t.matrix.frobenius_norm().max(1.0);
            if site_commutator_norm(inst, t, q, p) > inst.tol.eps_eq.max(eps) * scale {
                return reject(ROUTE, Some(0), format!("term {} does not keep the site {q} subspace", t.id));
            }
        }
    }
    let leaf = match factorized::restrict_to_leaf(inst, site_projectors) {
        Ok(l) => l,
        Err(e) => return reject(ROUTE, Some(0), e.to_string()),
    };
    let mut site_qubits = Vec::with_capacity(leaf.site_count());
    for (q, u) in site_unitaries.iter().enumerate() {
        let d = leaf.dim(q);
        let unitary = u.nrows() == d
            && u.ncols() == d
            && (u.adjoint() * u - CMat::identity(d, d)).norm() <= eps * (d as f64).sqrt();
        if !unitary || !d.is_power_of_two() {
            return reject(ROUTE, Some(0), format!("site {q}: unitary missing or leaf dimension {d} is not 2^m"));
        }
        site_qubits.push(d.trailing_zeros() as usize);
    }
    let n: usize = site_qubits.iter().sum();
    let listed: Vec<TermId> = pauli_words.iter().map(|t| t.id).collect();
    for t in &leaf.terms {
        let present = listed.contains(&t.id);
        if !present && t.matrix.frobenius_norm() > eps {
            return reject(ROUTE, Some(0), format!("term {} is nonzero on the leaf but has no Pauli word", t.id));
        }
    }
    if pauli_words.iter().any(|t| t.word.chars().count() != n || leaf.term(t.id).is_none()) {
        return reject(ROUTE, Some(0), format!("every word must name a term and have {n} letters"));
    }
    let form = PauliForm {
        site_qubits,
        site_unitaries: site_unitaries.clone(),
        terms: pauli_words.clone(),
        dropped: Vec::new(),
    };
    if pauli_words.iter().any(|t| t.word.parse::<factorized::PauliWord>().is_err()) {
        return reject(ROUTE, Some(0), "bad Pauli letter");
    }
    let err = pauli_round_trip_error(&leaf, &form);
    // NaN counts as failure.
    if err.is_nan() || err > 1e-8 {
        return reject(ROUTE, Some(0), format!("Pauli form does not reproduce the terms (error {err:e})"));
    }
    match stabilizer_verify(pauli_words, 0.0, w.threshold, eigenvalues) {
        Ok(true) => {
            let energy = pauli_words.iter().map(|t| t.coeff * eigenvalues[&t.id]).sum();
            VerifyReport {
                accept: true,
                route: ROUTE,
                energy: Some(energy),
                summand: None,
                rejection: None,
            }
        }
        Ok(false) => reject(ROUTE, Some(0), "energy above the threshold or -I in the stabilizer group"),
        Err(e) => reject(ROUTE, Some(0), e.to_string()),
    }
}
