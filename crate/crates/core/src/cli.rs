//! The `clh` command line. JSON results go to stdout and diagnostics to stderr.
//! Exit codes: 0 accept/success, 1 reject, 2 error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::algebra::{induced_algebra, structure_decompose};
use crate::budget::Budget;
use crate::factorized::{build_subspace_tree, PauliTerm};
use crate::linalg::Tolerance;
use crate::model::{check_commuting, dualize, projection_reduce, Instance, ProjectionWitness};
use crate::oracle::{self, prove_projection_family};
use crate::reduction::{is_commuting_projection_family, reduce_to_fixpoint, ReductionError, SemiSepCertificate};
use crate::removal::{eliminate_and_contract, eps_pos, find_positive_witness, tag_sites};
use crate::witness::{self, Step, Witness};

#[derive(Parser, Debug)]
#[command(name = "clh", version, about = "Check commuting local Hamiltonians on 2D lattices")]
pub struct Cli {
    /// Override eps_eq (commutator and equality tolerance).
    #[arg(long, global = true)]
    pub tol_eq: Option<f64>,
    /// Override eps_rank (numerical rank cutoff).
    #[arg(long, global = true)]
    pub tol_rank: Option<f64>,
    /// Override the seed used for random algebra elements.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on search steps.
    #[arg(long, global = true, default_value_t = Budget::DEFAULT)]
    pub budget: u64,
    /// Use the factorized (stabilizer) route.
    #[arg(long, global = true)]
    pub factorized: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Structural checks and pairwise commutation.
    Validate { instance: PathBuf },
    /// Induced algebras, ways and removability tags per site.
    Analyze { instance: PathBuf },
    /// Reduce a commuting-projection instance to a fixpoint (replays a witness if given).
    Reduce { instance: PathBuf, witness: Option<PathBuf> },
    /// Tag sites and search for a positive block choice.
    Remove { instance: PathBuf, witness: Option<PathBuf> },
    /// Check a witness for λ(H) ≤ threshold.
    Verify { instance: PathBuf, witness: PathBuf },
    /// Search for a witness for λ(H) ≤ threshold.
    Prove {
        instance: PathBuf,
        #[arg(default_value_t = 0.0, allow_negative_numbers = true)]
        threshold: f64,
    },
    /// Dense ground energy and kernel dimension.
    Oracle { instance: PathBuf },
    /// Stabilizer description of a factorized instance.
    FactorizedToStabilizer { instance: PathBuf },
    /// Swap the carrier (edges <-> vertices) of a supported torus.
    Dualize { instance: PathBuf },
}

/// Failure with enough context for the diagnostics line.
struct Failure {
    module: &'static str,
    op: &'static str,
    message: String,
}

fn fail(module: &'static str, op: &'static str, e: impl std::fmt::Display) -> Failure {
    Failure {
        module,
        op,
        message: e.to_string(),
    }
}

/// Result JSON and exit code.
type Outcome = Result<(Value, i32), Failure>;

/// Parse arguments and run; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    run_cli(&cli, out, err)
}

pub fn run_cli(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match dispatch(cli) {
        Ok((value, code)) => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&value).expect("json"));
            code
        }
        Err(f) => {
            let _ = writeln!(err, "error: {}::{}: {}", f.module, f.op, f.message);
            let value = json!({ "error": { "module": f.module, "op": f.op, "message": f.message } });
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&value).expect("json"));
            2
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| fail("cli", "read", format!("{}: {e}", path.display())))
}

// Parse, apply tolerance overrides, then validate.
fn load(cli: &Cli, path: &Path) -> Result<Instance, Failure> {
    let inst = parse(cli, path)?;
    inst.validate().map_err(|e| fail("model", "validate", e))?;
    Ok(inst)
}

fn parse(cli: &Cli, path: &Path) -> Result<Instance, Failure> {
    let mut inst = Instance::parse_json_str(&read(path)?).map_err(|e| fail("model", "parse", e))?;
    let tol = Tolerance::new(
        cli.tol_eq.unwrap_or(inst.tol.eps_eq),
        cli.tol_rank.unwrap_or(inst.tol.eps_rank),
        cli.seed.unwrap_or(inst.tol.seed),
    )
    .map_err(|e| fail("cli", "tolerance", e))?;
    inst.tol = tol;
    Ok(inst)
}

fn load_witness(path: &Path) -> Result<Witness, Failure> {
    Witness::from_json_str(&read(path)?).map_err(|e| fail("witness", "parse", e))
}

fn dispatch(cli: &Cli) -> Outcome {
    let mut budget = Budget::new(cli.budget);
    match &cli.command {
        Command::Validate { instance } => validate(cli, instance),
        Command::Analyze { instance } => analyze(&load(cli, instance)?),
        Command::Reduce { instance, witness } => reduce(&load(cli, instance)?, witness.as_deref(), &mut budget),
        Command::Remove { instance, witness } => remove(&load(cli, instance)?, witness.as_deref(), &mut budget),
        Command::Verify { instance, witness } => {
            let inst = load(cli, instance)?;
            let w = load_witness(witness)?;
            let route = if cli.factorized { Some(true) } else { None };
            let report = witness::verify(&inst, &w, route);
            let code = if report.accept { 0 } else { 1 };
            Ok((serde_json::to_value(report).expect("json"), code))
        }
        Command::Prove { instance, threshold } => {
            let inst = load(cli, instance)?;
            let factorized = cli.factorized;
            match oracle::prove(&inst, *threshold, factorized, &mut budget).map_err(|e| fail("oracle", "prove", e))? {
                Some(w) => Ok((serde_json::to_value(w).expect("json"), 0)),
                None => Ok((json!({ "accept": false, "unsat": true, "threshold": threshold }), 1)),
            }
        }
        Command::Oracle { instance } => {
            let inst = load(cli, instance)?;
            let h = oracle::assemble(&inst).map_err(|e| fail("oracle", "assemble", e))?;
            let lambda = oracle::ground_energy(&h);
            let kernel = match oracle::kernel_dim(&h, inst.tol.eps_rank) {
                Ok(k) => json!(k),
                Err(oracle::OracleError::NotPSD(_)) => Value::Null,
                Err(e) => return Err(fail("oracle", "kernel_dim", e)),
            };
            Ok((json!({ "lambda": lambda, "kernel_dim": kernel }), 0))
        }
        Command::FactorizedToStabilizer { instance } => stabilizer(&load(cli, instance)?, &mut budget),
        Command::Dualize { instance } => {
            let inst = load(cli, instance)?;
            let dual = dualize(&inst).map_err(|e| fail("model", "dualize", e))?;
            let v: Value = serde_json::from_str(&dual.to_json_string()).expect("instance json");
            Ok((v, 0))
        }
    }
}

fn validate(cli: &Cli, path: &Path) -> Outcome {
    let inst = parse(cli, path)?;
    if let Err(e) = inst.validate_structure() {
        return Ok((json!({ "valid": false, "error": e.to_string() }), 1));
    }
    let report = check_commuting(&inst);
    let mut v = json!({
        "valid": report.pass,
        "sites": inst.site_count(),
        "terms": inst.terms.len(),
        "factorized": inst.is_factorized(),
        "commutation": report,
    });
    if let Some((a, b, norm)) = report.violation {
        v["error"] = json!(format!("terms {a} and {b} do not commute (norm {norm:e})"));
    }
    Ok((v, if report.pass { 0 } else { 1 }))
}

fn analyze(inst: &Instance) -> Outcome {
    let mut sites = Vec::new();
    let tags = tag_sites(inst).map_err(|e| fail("removal", "tag_sites", e));
    for q in 0..inst.site_count() {
        let mut terms = Vec::new();
        for k in inst.terms_on(q) {
            let t = &inst.terms[k];
            let alg = induced_algebra(inst, t, q).map_err(|e| fail("algebra", "induced_algebra", e))?;
            let dec = structure_decompose(&alg, &inst.tol).map_err(|e| fail("algebra", "structure_decompose", e))?;
            terms.push(json!({
                "term": t.id,
                "algebra_dim": alg.len(),
                "trivial": alg.is_trivial(),
                "full": alg.is_full(),
                "blocks": dec.blocks.iter().map(|b| [b.d1, b.d2]).collect::<Vec<_>>(),
            }));
        }
        let mut site = json!({ "site": q, "dim": inst.dim(q), "terms": terms });
        if let Ok(tags) = &tags {
            let t = &tags[q];
            site["tag"] = serde_json::to_value(t.kind).expect("json");
            site["black"] = serde_json::to_value(&t.black).expect("json");
            site["white"] = serde_json::to_value(&t.white).expect("json");
            site["ranks"] = json!(t.ranks);
        }
        sites.push(site);
    }
    let mut v = json!({ "sites": sites });
    if let Err(f) = tags {
        v["tag_error"] = json!(f.message);
    }
    Ok((v, 0))
}

fn require_projections(inst: &Instance, op: &'static str) -> Result<(), Failure> {
    if !is_commuting_projection_family(inst, &inst.tol) {
        return Err(fail(
            "reduction",
            op,
            "terms are not commuting projections; use `prove` for general Hermitian terms",
        ));
    }
    Ok(())
}

fn reduce_steps_json(certs: &[SemiSepCertificate]) -> Vec<Value> {
    certs
        .iter()
        .map(|c| json!({ "site": c.site, "blocks": c.projectors.len(), "exempt_term": c.exempt_term, "chosen_block": c.chosen_block }))
        .collect()
}

fn reduce(inst: &Instance, witness: Option<&Path>, budget: &mut Budget) -> Outcome {
    match witness {
        Some(path) => {
            let w = load_witness(path)?;
            let mut cur = inst.clone();
            let mut offset = 0;
            if let Some(Step::Project { eigenvalues }) = w.steps.first() {
                let pw = ProjectionWitness {
                    eigenvalues: eigenvalues.clone(),
                };
                match projection_reduce(inst, &pw) {
                    Ok((r, _)) => cur = r,
                    Err(e) => return Ok((json!({ "accept": false, "step": 0, "reason": e.to_string() }), 1)),
                }
                offset = 1;
            } else {
                require_projections(inst, "reduce")?;
            }
            let certs: Vec<SemiSepCertificate> = w.steps[offset..]
                .iter()
                .map_while(|s| match s {
                    Step::Reduce {
                        site,
                        projectors,
                        exempt_term,
                        chosen_block,
                    } => Some(SemiSepCertificate {
                        site: *site,
                        projectors: projectors.clone(),
                        exempt_term: *exempt_term,
                        chosen_block: Some(*chosen_block),
                    }),
                    _ => None,
                })
                .collect();
            match reduce_to_fixpoint(&cur, &certs) {
                Ok(trace) => Ok((
                    json!({
                        "accept": true,
                        "steps": reduce_steps_json(&trace.steps),
                        "final_dims": trace.final_instance.qudit_dims,
                    }),
                    0,
                )),
                Err(ReductionError::InvalidStep { index, reason }) => Ok((
                    json!({ "accept": false, "step": index + offset, "reason": reason }),
                    1,
                )),
                Err(e) => Err(fail("reduction", "reduce_to_fixpoint", e)),
            }
        }
        None => {
            require_projections(inst, "reduce")?;
            let found = prove_projection_family(inst, budget).map_err(|e| fail("reduction", "prove_reduction", e))?;
            let certs: Vec<SemiSepCertificate> = found
                .iter()
                .flatten()
                .filter_map(|s| match s {
                    Step::Reduce {
                        site,
                        projectors,
                        exempt_term,
                        chosen_block,
                    } => Some(SemiSepCertificate {
                        site: *site,
                        projectors: projectors.clone(),
                        exempt_term: *exempt_term,
                        chosen_block: Some(*chosen_block),
                    }),
                    _ => None,
                })
                .collect();
            let trace = reduce_to_fixpoint(inst, &certs).map_err(|e| fail("reduction", "reduce_to_fixpoint", e))?;
            let nontrivial = found.is_some();
            Ok((
                json!({
                    "kernel_nontrivial": nontrivial,
                    "steps": reduce_steps_json(&trace.steps),
                    "final_dims": trace.final_instance.qudit_dims,
                }),
                if nontrivial { 0 } else { 1 },
            ))
        }
    }
}

fn remove(inst: &Instance, witness: Option<&Path>, budget: &mut Budget) -> Outcome {
    require_projections(inst, "remove")?;
    let tags = tag_sites(inst).map_err(|e| fail("removal", "tag_sites", e))?;
    let kinds: Vec<Value> = tags.iter().map(|t| json!({ "site": t.site, "kind": t.kind })).collect();
    let choice = match witness {
        Some(path) => {
            let w = load_witness(path)?;
            let map: BTreeMap<usize, (usize, usize)> = w
                .steps
                .iter()
                .filter_map(|s| match s {
                    Step::Remove { site, block_i, block_j } => Some((*site, (*block_i, *block_j))),
                    _ => None,
                })
                .collect();
            let value = match eliminate_and_contract(inst, &tags, &map) {
                Ok(v) => v,
                Err(e) => return Ok((json!({ "accept": false, "tags": kinds, "reason": e.to_string() }), 1)),
            };
            Some((map, value))
        }
        None => find_positive_witness(inst, &tags, budget).map_err(|e| fail("removal", "find_positive_witness", e))?,
    };
    let cut = eps_pos(inst);
    match choice {
        Some((map, value)) => {
            let accept = value > cut;
            let pairs: BTreeMap<String, [usize; 2]> = map.iter().map(|(s, &(i, j))| (s.to_string(), [i, j])).collect();
            Ok((
                json!({ "accept": accept, "tags": kinds, "blocks": pairs, "summand": value, "eps_pos": cut }),
                if accept { 0 } else { 1 },
            ))
        }
        None => Ok((json!({ "accept": false, "tags": kinds, "eps_pos": cut }), 1)),
    }
}

fn stab_json(terms: &[PauliTerm], qubits: usize) -> Value {
    let generators: Vec<String> = terms
        .iter()
        .map(|t| format!("{}{}", if t.coeff < 0.0 { '-' } else { '+' }, t.word))
        .collect();
    let coefficients: Vec<f64> = terms.iter().map(|t| t.coeff.abs()).collect();
    let ids: Vec<u64> = terms.iter().map(|t| t.id).collect();
    json!({
        "format": "stab/v1",
        "qubits": qubits,
        "generators": generators,
        "coefficients": coefficients,
        "term_ids": ids,
    })
}

fn stabilizer(inst: &Instance, budget: &mut Budget) -> Outcome {
    if !inst.is_factorized() {
        return Err(fail("factorized", "to_pauli_form", "every term needs per-site factors"));
    }
    let tree = build_subspace_tree(inst, budget).map_err(|e| fail("factorized", "build_subspace_tree", e))?;
    let mut leaves: Vec<Value> = tree
        .leaves
        .iter()
        .map(|l| stab_json(&l.form.terms, l.form.qubits()))
        .collect();
    if leaves.len() == 1 {
        return Ok((leaves.remove(0), 0));
    }
    Ok((json!({ "format": "stab/v1", "leaves": leaves }), 0))
}
