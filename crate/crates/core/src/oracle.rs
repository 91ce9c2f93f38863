//! Dense ground truth and the witness-producing prover.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::budget::{Budget, BudgetExceeded};
use crate::factorized::{build_subspace_tree, stabilizer_ground_energy, FactorizedError};
use crate::linalg::{c, eig_hermitian_matrix, scale_of, strides, CMat, LinalgError, C64};
use crate::model::{distinct_eigenvalues, projection_reduce, Instance, ModelError, ProjectionWitness, Term};
use crate::reduction::{prove_reduction, ReductionError};
use crate::removal::{find_positive_witness, tag_sites, RemovalError, TagKind};
use crate::witness::{energy_slack, Step, Witness};

/// Largest global dimension the dense oracle will build.
pub const ORACLE_CAP: usize = 1 << 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("global dimension {0} exceeds the dense cap {1}")]
    OverflowDim(usize, usize),
    #[error("H is not positive semidefinite (lowest eigenvalue {0})")]
    NotPSD(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Removal(#[from] RemovalError),
    #[error(transparent)]
    Factorized(#[from] FactorizedError),
    #[error(transparent)]
    Budget(#[from] BudgetExceeded),
}

pub type Result<T> = std::result::Result<T, OracleError>;

#[derive(Clone, Debug)]
pub struct DenseHamiltonian {
    pub matrix: CMat,
    pub dims: Vec<usize>,
}

fn dense_dim(inst: &Instance) -> Result<usize> {
    let overflow = || {
        let d = inst.qudit_dims.iter().fold(1usize, |a, &b| a.saturating_mul(b));
        OracleError::OverflowDim(d, ORACLE_CAP)
    };
    let d = inst.global_dim().ok_or_else(overflow)?;
    if d > ORACLE_CAP {
        return Err(overflow());
    }
    Ok(d)
}

/// `(I ⊗ op ⊗ I) m` where `op` acts on the term's support in the global
/// site order.
pub fn apply_term_left(m: &CMat, dims: &[usize], support: &[usize], op: &CMat) -> CMat {
    let gstr = strides(dims);
    let odims: Vec<usize> = support.iter().map(|&s| dims[s]).collect();
    let ostr = strides(&odims);
    let od: usize = odims.iter().product();
    let total: usize = dims.iter().product();
    let rest: Vec<usize> = (0..dims.len()).filter(|s| !support.contains(s)).collect();
    let rdims: Vec<usize> = rest.iter().map(|&s| dims[s]).collect();
    let rstr = strides(&rdims);
    let rd: usize = rdims.iter().product();
    let local: Vec<usize> = (0..od)
        .map(|i| support.iter().enumerate().map(|(k, &s)| (i / ostr[k]) % odims[k] * gstr[s]).sum())
        .collect();
    let mut out = CMat::zeros(total, m.ncols());
    let mut buf = vec![C64::default(); od];
    for r in 0..rd {
        let base: usize = rest.iter().enumerate().map(|(k, &s)| (r / rstr[k]) % rdims[k] * gstr[s]).sum();
        for col in 0..m.ncols() {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = m[(base + local[i], col)];
            }
            for y in 0..od {
                let mut acc = C64::default();
                for (x, b) in buf.iter().enumerate() {
                    acc += op[(y, x)] * b;
                }
                out[(base + local[y], col)] = acc;
            }
        }
    }
    out
}

fn embedded(inst: &Instance, t: &Term) -> CMat {
    let d: usize = inst.qudit_dims.iter().product();
    apply_term_left(&CMat::identity(d, d), &inst.qudit_dims, &t.support, t.matrix.matrix())
}

/// H = Σ terms, each padded with identities.
pub fn assemble(inst: &Instance) -> Result<DenseHamiltonian> {
    let d = dense_dim(inst)?;
    let mut h = CMat::zeros(d, d);
    for t in &inst.terms {
        h += embedded(inst, t);
    }
    Ok(DenseHamiltonian {
        matrix: (&h + h.adjoint()) * c(0.5, 0.0),
        dims: inst.qudit_dims.clone(),
    })
}

/// Ascending eigenvalues.
pub fn spectrum(h: &DenseHamiltonian) -> Vec<f64> {
    eig_hermitian_matrix(&h.matrix).values
}

pub fn ground_energy(h: &DenseHamiltonian) -> f64 {
    spectrum(h).first().copied().unwrap_or(0.0)
}

/// Number of eigenvalues at most eps_rank·‖H‖; H must be PSD.
pub fn kernel_dim(h: &DenseHamiltonian, eps_rank: f64) -> Result<usize> {
    let vals = spectrum(h);
    let top = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = eps_rank * scale_of(top);
    if let Some(&lo) = vals.first() {
        if lo < -cut {
            return Err(OracleError::NotPSD(lo));
        }
    }
    Ok(vals.iter().filter(|&&v| v <= cut).count())
}

/// Dense tr ∏_p (I - p), product in term order.
pub fn trace_product_complement(inst: &Instance) -> Result<f64> {
    let d = dense_dim(inst)?;
    let mut m = CMat::identity(d, d);
    for t in &inst.terms {
        let n = t.matrix.dim();
        let comp = CMat::identity(n, n) - t.matrix.matrix();
        m = apply_term_left(&m, &inst.qudit_dims, &t.support, &comp);
    }
    Ok(m.trace().re)
}

/// Dense kernel test on Σ p; for commuting projections it agrees with
/// tr ∏(I - p) > 0.
pub fn has_kernel(inst: &Instance) -> Result<bool> {
    Ok(kernel_dim(&assemble(inst)?, inst.tol.eps_rank)? > 0)
}

/// Find a witness for λ(H) ≤ a, or None after exhausting the search space.
/// The factorized route uses the subspace tree and stabilizer arithmetic;
/// otherwise: eigenvalue vectors with Σλ ≤ a, then the reduction search,
/// then an R1 block choice with a positive summand.
pub fn prove(inst: &Instance, a: f64, factorized: bool, budget: &mut Budget) -> Result<Option<Witness>> {
    if inst.global_dim().is_none() {
        let d = inst.qudit_dims.iter().fold(1usize, |x, &y| x.saturating_mul(y));
        return Err(OracleError::OverflowDim(d, crate::linalg::DIM_CAP));
    }
    if factorized {
        prove_factorized(inst, a, budget)
    } else {
        prove_projection(inst, a, budget)
    }
}

fn prove_factorized(inst: &Instance, a: f64, budget: &mut Budget) -> Result<Option<Witness>> {
    let tree = build_subspace_tree(inst, budget)?;
    let mut best: Option<(f64, usize, BTreeMap<u64, f64>)> = None;
    for (k, leaf) in tree.leaves.iter().enumerate() {
        let (e, lam) = stabilizer_ground_energy(&leaf.form.terms, 0.0, budget)?;
        let better = match &best {
            None => true,
            Some((b, _, _)) => e < *b - 1e-12,
        };
        if better {
            best = Some((e, k, lam));
        }
    }
    let Some((e, k, lam)) = best else { return Ok(None) };
    if e > a + energy_slack(a) {
        return Ok(None);
    }
    let leaf = &tree.leaves[k];
    Ok(Some(Witness::new(
        a,
        vec![Step::Leaf {
            site_projectors: leaf.site_projectors.clone(),
            site_unitaries: leaf.form.site_unitaries.clone(),
            pauli_words: leaf.form.terms.clone(),
            eigenvalues: lam,
        }],
    )))
}

fn prove_projection(inst: &Instance, a: f64, budget: &mut Budget) -> Result<Option<Witness>> {
    let spectra: Vec<Vec<f64>> = inst
        .terms
        .iter()
        .map(|t| distinct_eigenvalues(&t.matrix, &inst.tol))
        .collect::<std::result::Result<_, _>>()?;
    // Smallest achievable sum of the remaining terms, for pruning.
    let mut tail_min = vec![0.0; spectra.len() + 1];
    for k in (0..spectra.len()).rev() {
        tail_min[k] = tail_min[k + 1] + spectra[k].first().copied().unwrap_or(0.0);
    }
    let limit = a + energy_slack(a);
    let mut choice = Vec::with_capacity(spectra.len());
    search_eigenvalues(inst, &spectra, &tail_min, limit, a, 0.0, &mut choice, budget)
}

#[allow(clippy::too_many_arguments)]
fn search_eigenvalues(
    inst: &Instance,
    spectra: &[Vec<f64>],
    tail_min: &[f64],
    limit: f64,
    a: f64,
    partial: f64,
    choice: &mut Vec<f64>,
    budget: &mut Budget,
) -> Result<Option<Witness>> {
    let k = choice.len();
    if k == spectra.len() {
        budget.tick()?;
        let eigenvalues: BTreeMap<u64, f64> = inst.terms.iter().map(|t| t.id).zip(choice.iter().copied()).collect();
        let pw = ProjectionWitness {
            eigenvalues: eigenvalues.clone(),
        };
        let (reduced, _) = projection_reduce(inst, &pw)?;
        return Ok(prove_projection_family(&reduced, budget)?.map(|mut steps| {
            steps.insert(0, Step::Project { eigenvalues });
            Witness::new(a, steps)
        }));
    }
    for &l in &spectra[k] {
        if partial + l + tail_min[k + 1] > limit {
            // Ascending spectra: later choices are no better.
            break;
        }
        choice.push(l);
        let found = search_eigenvalues(inst, spectra, tail_min, limit, a, partial + l, choice, budget)?;
        choice.pop();
        if found.is_some() {
            return Ok(found);
        }
    }
    Ok(None)
}

/// Reduction search plus removal for a commuting-projection family: the
/// steps after the project step, or None when tr ∏(I - p) = 0.
pub fn prove_projection_family(inst: &Instance, budget: &mut Budget) -> Result<Option<Vec<Step>>> {
    let mut leaf = |fin: &Instance, b: &mut Budget| -> Result<Option<Vec<Step>>> {
        let tags = tag_sites(fin)?;
        let Some((choice, _)) = find_positive_witness(fin, &tags, b)? else {
            return Ok(None);
        };
        let mut steps: Vec<Step> = choice
            .iter()
            .map(|(&site, &(block_i, block_j))| Step::Remove { site, block_i, block_j })
            .collect();
        steps.extend(
            tags.iter()
                .filter(|t| t.kind == TagKind::R2)
                .map(|t| Step::Split { site: t.site }),
        );
        Ok(Some(steps))
    };
    let found = prove_reduction(inst, budget, &mut leaf)?;
    Ok(found.map(|(certs, _, tail)| {
        let mut steps: Vec<Step> = certs
            .into_iter()
            .map(|cert| Step::Reduce {
                site: cert.site,
                projectors: cert.projectors,
                exempt_term: cert.exempt_term,
                chosen_block: cert.chosen_block.expect("prover records the block"),
            })
            .collect();
        steps.extend(tail);
        steps
    }))
}
