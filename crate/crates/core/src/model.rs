//! Lattice instances: geometry, the CLH-JSON file format, validation,
//! commutation checks, projection reduction and edge/vertex duality.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    self, c, embed, hermitian_eig, scale_of, tensor_all, CMat, LinalgError, Operator, Tolerance, C64,
};

pub const INSTANCE_FORMAT: &str = "clh-2d/v1";

pub type TermId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation failed: {0}")]
    Validation(ValidationIssue),
    #[error("term {0}: eigenvalue {1} is not in the spectrum")]
    BadEigenvalue(TermId, f64),
    #[error("term {0}: no eigenvalue supplied")]
    MissingEigenvalue(TermId),
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationIssue {
    #[error("format tag is {0:?}, expected \"clh-2d/v1\"")]
    BadFormat(String),
    #[error("lattice: {0}")]
    BadLattice(String),
    #[error("qudit_dims: {0}")]
    BadDims(String),
    #[error("duplicate term id {0}")]
    DuplicateTermId(TermId),
    #[error("term {term}: bad support ({reason})")]
    BadSupport { term: TermId, reason: String },
    #[error("term {term}: bad matrix ({reason})")]
    BadMatrix { term: TermId, reason: String },
    #[error("term {term}: not Hermitian (deviation {deviation:.3e})")]
    NotHermitian { term: TermId, deviation: f64 },
    #[error("term {term}: bad factors ({reason})")]
    BadFactors { term: TermId, reason: String },
    #[error("terms {a} and {b} do not commute (||[a,b]||_F = {norm:.3e})")]
    NonCommuting { a: TermId, b: TermId, norm: f64 },
    #[error("tolerance: {0}")]
    BadTolerance(String),
}

impl From<ValidationIssue> for ModelError {
    fn from(v: ValidationIssue) -> Self {
        ModelError::Validation(v)
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Torus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Carrier {
    Vertices,
    Edges,
}

fn is_zero(x: &usize) -> bool {
    *x == 0
}

/// Square lattice. On a vertices torus, `twist` shifts the column by that many
/// places when wrapping from the last row back to row 0; it is what makes the
/// dual of an edges torus representable. Zero (and omitted in files) otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lattice2D {
    pub rows: usize,
    pub cols: usize,
    pub boundary: Boundary,
    pub carrier: Carrier,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub twist: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Plaquette,
    Star,
}

/// A plaquette (or star) that can host a term.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub kind: CellKind,
    pub row: usize,
    pub col: usize,
    /// Sites in canonical order: UL, UR, LL, LR for vertex plaquettes; top,
    /// bottom, left, right for edge plaquettes; right, left, down, up for stars.
    pub sites: Vec<usize>,
}

impl Lattice2D {
    pub fn new(rows: usize, cols: usize, boundary: Boundary, carrier: Carrier) -> Self {
        Lattice2D {
            rows,
            cols,
            boundary,
            carrier,
            twist: 0,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), ValidationIssue> {
        if self.rows == 0 || self.cols == 0 {
            return Err(ValidationIssue::BadLattice("rows and cols must be positive".into()));
        }
        if self.boundary == Boundary::Torus && (self.rows < 2 || self.cols < 2) {
            return Err(ValidationIssue::BadLattice("a torus needs rows, cols >= 2".into()));
        }
        if self.twist != 0 && (self.boundary != Boundary::Torus || self.carrier != Carrier::Vertices) {
            return Err(ValidationIssue::BadLattice("twist is only defined for a vertices torus".into()));
        }
        if self.twist >= self.cols.max(1) && self.twist != 0 {
            return Err(ValidationIssue::BadLattice("twist must be smaller than cols".into()));
        }
        Ok(())
    }

    pub fn site_count(&self) -> usize {
        match (self.carrier, self.boundary) {
            (Carrier::Vertices, _) => self.rows * self.cols,
            (Carrier::Edges, Boundary::Torus) => 2 * self.rows * self.cols,
            (Carrier::Edges, Boundary::Open) => {
                self.rows * (self.cols - 1) + (self.rows - 1) * self.cols
            }
        }
    }

    /// Vertex site below (r, c), following the torus twist.
    fn down(&self, r: usize, c: usize) -> Option<(usize, usize)> {
        if r + 1 < self.rows {
            Some((r + 1, c))
        } else if self.boundary == Boundary::Torus {
            Some((0, (c + self.twist) % self.cols))
        } else {
            None
        }
    }

    fn right(&self, c: usize) -> Option<usize> {
        if c + 1 < self.cols {
            Some(c + 1)
        } else if self.boundary == Boundary::Torus {
            Some(0)
        } else {
            None
        }
    }

    pub fn vertex_id(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    pub fn vertex_coords(&self, site: usize) -> (usize, usize) {
        (site / self.cols, site % self.cols)
    }

    /// Horizontal edge from vertex (r,c) to its right neighbour.
    pub fn h_edge(&self, r: usize, c: usize) -> usize {
        match self.boundary {
            Boundary::Torus => r * self.cols + c,
            Boundary::Open => r * (self.cols - 1) + c,
        }
    }

    /// Vertical edge from vertex (r,c) to the vertex below.
    pub fn v_edge(&self, r: usize, c: usize) -> usize {
        match self.boundary {
            Boundary::Torus => self.rows * self.cols + r * self.cols + c,
            Boundary::Open => self.rows * (self.cols - 1) + r * self.cols + c,
        }
    }

    /// All cells in canonical order (plaquettes row-major, then stars row-major).
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        let torus = self.boundary == Boundary::Torus;
        let (pr, pc) = if torus {
            (self.rows, self.cols)
        } else {
            (self.rows.saturating_sub(1), self.cols.saturating_sub(1))
        };
        match self.carrier {
            Carrier::Vertices => {
                for r in 0..pr {
                    for cc in 0..pc {
                        let c1 = self.right(cc).expect("inside grid");
                        let (lr, lc) = self.down(r, cc).expect("inside grid");
                        let (rr, rc) = self.down(r, c1).expect("inside grid");
                        out.push(Cell {
                            kind: CellKind::Plaquette,
                            row: r,
                            col: cc,
                            sites: vec![
                                self.vertex_id(r, cc),
                                self.vertex_id(r, c1),
                                self.vertex_id(lr, lc),
                                self.vertex_id(rr, rc),
                            ],
                        });
                    }
                }
            }
            Carrier::Edges => {
                let wrap_r = |r: usize| (r + 1) % self.rows;
                let wrap_c = |c: usize| (c + 1) % self.cols;
                for r in 0..pr {
                    for cc in 0..pc {
                        out.push(Cell {
                            kind: CellKind::Plaquette,
                            row: r,
                            col: cc,
                            sites: vec![
                                self.h_edge(r, cc),
                                self.h_edge(wrap_r(r), cc),
                                self.v_edge(r, cc),
                                self.v_edge(r, wrap_c(cc)),
                            ],
                        });
                    }
                }
                for r in 0..self.rows {
                    for cc in 0..self.cols {
                        let mut sites = Vec::new();
                        if torus || cc + 1 < self.cols {
                            sites.push(self.h_edge(r, cc));
                        }
                        if torus {
                            sites.push(self.h_edge(r, (cc + self.cols - 1) % self.cols));
                        } else if cc > 0 {
                            sites.push(self.h_edge(r, cc - 1));
                        }
                        if torus || r + 1 < self.rows {
                            sites.push(self.v_edge(r, cc));
                        }
                        if torus {
                            sites.push(self.v_edge((r + self.rows - 1) % self.rows, cc));
                        } else if r > 0 {
                            sites.push(self.v_edge(r - 1, cc));
                        }
                        out.push(Cell {
                            kind: CellKind::Star,
                            row: r,
                            col: cc,
                            sites,
                        });
                    }
                }
            }
        }
        out
    }

    /// Index into `cells()` of the first cell containing every site of `support`.
    pub fn cell_of(&self, support: &[usize]) -> Option<usize> {
        self.cells()
            .iter()
            .position(|cell| support.iter().all(|s| cell.sites.contains(s)))
    }
}

/// A Hermitian term on a few sites; `factors`, when present, is a per-site
/// factorization in support order.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub id: TermId,
    pub support: Vec<usize>,
    pub matrix: Operator,
    pub factors: Option<Vec<Operator>>,
}

impl Term {
    pub fn new(id: TermId, support: Vec<usize>, matrix: CMat) -> Self {
        let matrix = Operator::from_matrix(matrix)
            .expect("term matrix must be square")
            .with_support(support.clone());
        Term {
            id,
            support,
            matrix,
            factors: None,
        }
    }

    /// A factorized term; the matrix is the tensor product of the factors.
    pub fn factorized(id: TermId, support: Vec<usize>, factors: Vec<CMat>) -> Self {
        let ops: Vec<Operator> = factors
            .into_iter()
            .zip(&support)
            .map(|(f, &s)| Operator::from_matrix(f).expect("square factor").with_support(vec![s]))
            .collect();
        let zero = ops.iter().any(|f| f.frobenius_norm() == 0.0);
        let ops: Vec<Operator> = if zero {
            ops.iter().map(|f| Operator::zeros(f.dim()).with_support(f.support().to_vec())).collect()
        } else {
            ops
        };
        let matrix = tensor_all(&ops).expect("factor dims under the cap").with_support(support.clone());
        Term {
            id,
            support,
            matrix,
            factors: Some(ops),
        }
    }

    pub fn position(&self, site: usize) -> Option<usize> {
        self.support.iter().position(|&s| s == site)
    }

    pub fn acts_on(&self, site: usize) -> bool {
        self.support.contains(&site)
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.frobenius_norm() == 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub lattice: Lattice2D,
    pub qudit_dims: Vec<usize>,
    pub terms: Vec<Term>,
    pub tol: Tolerance,
}

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    dim: usize,
    entries: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct TermFile {
    id: TermId,
    support: Vec<usize>,
    matrix: MatrixFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factors: Option<Vec<MatrixFile>>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    format: String,
    lattice: Lattice2D,
    qudit_dims: Vec<usize>,
    terms: Vec<TermFile>,
    tolerance: Tolerance,
}

pub(crate) fn matrix_to_json(m: &CMat) -> serde_json::Value {
    serde_json::to_value(matrix_file(m)).expect("plain data serializes")
}

pub(crate) fn matrix_from_json(v: &serde_json::Value) -> std::result::Result<CMat, String> {
    let mf: MatrixFile = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
    read_matrix(&mf)
}

fn matrix_file(m: &CMat) -> MatrixFile {
    let n = m.nrows();
    let mut entries = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let z = m[(i, j)];
            entries.push([z.re, z.im]);
        }
    }
    MatrixFile { dim: n, entries }
}

fn read_matrix(mf: &MatrixFile) -> std::result::Result<CMat, String> {
    if mf.dim == 0 || mf.entries.len() != mf.dim * mf.dim {
        return Err(format!(
            "dim {} needs {} entries, found {}",
            mf.dim,
            mf.dim * mf.dim,
            mf.entries.len()
        ));
    }
    let data: Vec<C64> = mf.entries.iter().map(|e| c(e[0], e[1])).collect();
    Ok(CMat::from_row_slice(mf.dim, mf.dim, &data))
}

impl Instance {
    pub fn new(lattice: Lattice2D, qudit_dims: Vec<usize>, terms: Vec<Term>, tol: Tolerance) -> Self {
        Instance {
            lattice,
            qudit_dims,
            terms,
            tol,
        }
    }

    pub fn site_count(&self) -> usize {
        self.qudit_dims.len()
    }

    pub fn dim(&self, site: usize) -> usize {
        self.qudit_dims[site]
    }

    pub fn dims_of(&self, sites: &[usize]) -> Vec<usize> {
        sites.iter().map(|&s| self.qudit_dims[s]).collect()
    }

    pub fn term(&self, id: TermId) -> Option<&Term> {
        self.terms.iter().find(|t| t.id == id)
    }

    /// Indices (into `terms`) of the terms acting on `site`, in term order.
    pub fn terms_on(&self, site: usize) -> Vec<usize> {
        (0..self.terms.len()).filter(|&k| self.terms[k].acts_on(site)).collect()
    }

    pub fn is_factorized(&self) -> bool {
        !self.terms.is_empty() && self.terms.iter().all(|t| t.factors.is_some())
    }

    /// Product of all site dimensions, or None past the cap.
    pub fn global_dim(&self) -> Option<usize> {
        let mut d: usize = 1;
        for &q in &self.qudit_dims {
            d = d.checked_mul(q)?;
            if d > linalg::DIM_CAP {
                return None;
            }
        }
        Some(d)
    }

    /// Parse and validate.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let inst = Self::parse_json_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    /// Parse only; callers that override the tolerance validate afterwards.
    pub fn parse_json_str(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| ModelError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.format != INSTANCE_FORMAT {
            return Err(ValidationIssue::BadFormat(file.format).into());
        }
        let mut terms = Vec::with_capacity(file.terms.len());
        for tf in file.terms {
            let m = read_matrix(&tf.matrix).map_err(|reason| ValidationIssue::BadMatrix { term: tf.id, reason })?;
            let matrix = Operator::from_matrix(m)?.with_support(tf.support.clone());
            let factors = match tf.factors {
                None => None,
                Some(fs) => {
                    let mut ops = Vec::with_capacity(fs.len());
                    for (k, f) in fs.iter().enumerate() {
                        let m = read_matrix(f).map_err(|reason| ValidationIssue::BadFactors { term: tf.id, reason })?;
                        let site = tf.support.get(k).copied().unwrap_or(usize::MAX);
                        ops.push(Operator::from_matrix(m)?.with_support(vec![site]));
                    }
                    Some(ops)
                }
            };
            terms.push(Term {
                id: tf.id,
                support: tf.support,
                matrix,
                factors,
            });
        }
        let inst = Instance {
            lattice: file.lattice,
            qudit_dims: file.qudit_dims,
            terms,
            tol: file.tolerance,
        };
        Ok(inst)
    }

    pub fn to_json_string(&self) -> String {
        let file = InstanceFile {
            format: INSTANCE_FORMAT.to_string(),
            lattice: self.lattice,
            qudit_dims: self.qudit_dims.clone(),
            terms: self
                .terms
                .iter()
                .map(|t| TermFile {
                    id: t.id,
                    support: t.support.clone(),
                    matrix: matrix_file(t.matrix.matrix()),
                    factors: t
                        .factors
                        .as_ref()
                        .map(|fs| fs.iter().map(|f| matrix_file(f.matrix())).collect()),
                })
                .collect(),
            tolerance: self.tol,
        };
        serde_json::to_string_pretty(&file).expect("plain data serializes")
    }

    /// Structural checks, Hermiticity, factor consistency, then commutation.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        match check_commuting(self).violation {
            Some((a, b, norm)) => Err(ValidationIssue::NonCommuting { a, b, norm }.into()),
            None => Ok(()),
        }
    }

    /// Everything except the pairwise commutation check.
    pub fn validate_structure(&self) -> Result<()> {
        self.tol
            .validate()
            .map_err(|e| ValidationIssue::BadTolerance(e.to_string()))?;
        self.lattice.validate()?;
        let n = self.lattice.site_count();
        if self.qudit_dims.len() != n {
            return Err(ValidationIssue::BadDims(format!(
                "lattice has {n} sites but {} dims were given",
                self.qudit_dims.len()
            ))
            .into());
        }
        if let Some(s) = self.qudit_dims.iter().position(|&d| d == 0) {
            return Err(ValidationIssue::BadDims(format!("site {s} has dimension 0")).into());
        }
        let cells = self.lattice.cells();
        let mut seen = BTreeSet::new();
        for t in &self.terms {
            if !seen.insert(t.id) {
                return Err(ValidationIssue::DuplicateTermId(t.id).into());
            }
            let bad = |reason: &str| ValidationIssue::BadSupport {
                term: t.id,
                reason: reason.to_string(),
            };
            if t.support.is_empty() {
                return Err(bad("empty").into());
            }
            let uniq: BTreeSet<_> = t.support.iter().collect();
            if uniq.len() != t.support.len() {
                return Err(bad("repeated site").into());
            }
            if t.support.iter().any(|&s| s >= n) {
                return Err(bad("site id out of range").into());
            }
            if !cells.iter().any(|cell| t.support.iter().all(|s| cell.sites.contains(s))) {
                return Err(bad("not contained in any plaquette or star").into());
            }
            let want: usize = t.support.iter().map(|&s| self.qudit_dims[s]).product();
            if t.matrix.dim() != want {
                return Err(ValidationIssue::BadMatrix {
                    term: t.id,
                    reason: format!("dim {} but support needs {want}", t.matrix.dim()),
                }
                .into());
            }
            if !t.matrix.is_hermitian(&self.tol) {
                return Err(ValidationIssue::NotHermitian {
                    term: t.id,
                    deviation: t.matrix.hermitian_deviation(),
                }
                .into());
            }
            if let Some(fs) = &t.factors {
                self.validate_factors(t, fs)?;
            }
        }
        Ok(())
    }

    fn validate_factors(&self, t: &Term, fs: &[Operator]) -> Result<()> {
        let bad = |reason: String| -> ModelError { ValidationIssue::BadFactors { term: t.id, reason }.into() };
        if fs.len() != t.support.len() {
            return Err(bad(format!("{} factors for {} sites", fs.len(), t.support.len())));
        }
        for (f, &s) in fs.iter().zip(&t.support) {
            if f.dim() != self.qudit_dims[s] {
                return Err(bad(format!("factor on site {s} has dim {}", f.dim())));
            }
            if !f.is_hermitian(&self.tol) {
                return Err(bad(format!("factor on site {s} is not Hermitian")));
            }
        }
        let zeros = fs.iter().filter(|f| f.frobenius_norm() == 0.0).count();
        if zeros > 0 && zeros < fs.len() {
            return Err(bad("a zero term must store every factor as zero".into()));
        }
        let prod = tensor_all(fs)?;
        if !prod.approx_eq(&t.matrix, self.tol.eps_eq) {
            return Err(bad("matrix differs from the tensor product of factors".into()));
        }
        Ok(())
    }
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let p = path.as_ref();
    let text = std::fs::read_to_string(p).map_err(|e| ModelError::Io {
        path: p.display().to_string(),
        message: e.to_string(),
    })?;
    Instance::from_json_str(&text)
}

pub fn save_instance(inst: &Instance, path: impl AsRef<Path>) -> Result<()> {
    let p = path.as_ref();
    std::fs::write(p, inst.to_json_string()).map_err(|e| ModelError::Io {
        path: p.display().to_string(),
        message: e.to_string(),
    })
}

/// Outcome of the pairwise commutation scan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommutationReport {
    pub max_norm: f64,
    pub worst_pair: Option<(TermId, TermId)>,
    pub pairs_checked: usize,
    pub pass: bool,
    /// First pair (in term order) over its limit, with its norm.
    pub violation: Option<(TermId, TermId, f64)>,
}

/// Union of two supports, `a` first.
pub fn joint_support(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = a.to_vec();
    for &s in b {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// ||[a, b]||_F for two terms, embedded on their joint support.
pub fn commutator_norm(inst: &Instance, a: &Term, b: &Term) -> f64 {
    let joint = joint_support(&a.support, &b.support);
    let ea = embed(a.matrix.matrix(), &a.support, &joint, |s| inst.qudit_dims[s]);
    let eb = embed(b.matrix.matrix(), &b.support, &joint, |s| inst.qudit_dims[s]);
    (&ea * &eb - &eb * &ea).norm()
}

/// Max over overlapping pairs of ||[p, p']||_F. A pair passes when its norm is
/// at most eps_eq * max(1, ||p||_F ||p'||_F).
pub fn check_commuting(inst: &Instance) -> CommutationReport {
    let mut report = CommutationReport {
        max_norm: 0.0,
        worst_pair: None,
        pairs_checked: 0,
        pass: true,
        violation: None,
    };
    for i in 0..inst.terms.len() {
        for j in i + 1..inst.terms.len() {
            let (a, b) = (&inst.terms[i], &inst.terms[j]);
            if !a.support.iter().any(|s| b.support.contains(s)) {
                continue;
            }
            report.pairs_checked += 1;
            let norm = commutator_norm(inst, a, b);
            let limit = inst.tol.eps_eq * scale_of(a.matrix.frobenius_norm() * b.matrix.frobenius_norm());
            if norm > limit && report.pass {
                report.pass = false;
                report.violation = Some((a.id, b.id, norm));
            }
            if report.worst_pair.is_none() || norm > report.max_norm {
                report.max_norm = norm;
                report.worst_pair = Some((a.id, b.id));
            }
        }
    }
    report
}

/// Per-term eigenvalue choice for the projection reduction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionWitness {
    pub eigenvalues: BTreeMap<TermId, f64>,
}

/// Distinct eigenvalues of a Hermitian term, clustered at the witness
/// matching tolerance.
pub fn distinct_eigenvalues(op: &Operator, tol: &Tolerance) -> Result<Vec<f64>> {
    let eig = hermitian_eig(op, tol)?;
    let gap = tol.eps_rank * scale_of(eig.spectral_radius());
    Ok(eig
        .clusters(gap)
        .iter()
        .map(|cl| cl.iter().map(|&k| eig.values[k]).sum::<f64>() / cl.len() as f64)
        .collect())
}

/// Replace each term p by I - Π where Π projects onto the chosen eigenspace.
/// Returns the reduced instance and Σ λ_p.
pub fn projection_reduce(inst: &Instance, w: &ProjectionWitness) -> Result<(Instance, f64)> {
    let mut out = inst.clone();
    let mut total = 0.0;
    for t in out.terms.iter_mut() {
        let lambda = *w.eigenvalues.get(&t.id).ok_or(ModelError::MissingEigenvalue(t.id))?;
        let eig = hermitian_eig(&t.matrix, &inst.tol)?;
        let cut = inst.tol.eps_rank * scale_of(eig.spectral_radius());
        if !eig.values.iter().any(|v| (v - lambda).abs() <= cut) {
            return Err(ModelError::BadEigenvalue(t.id, lambda));
        }
        let pi = eig.projector(|v| (v - lambda).abs() <= cut);
        let n = pi.nrows();
        let hat = CMat::identity(n, n) - pi;
        let hat = (&hat + hat.adjoint()) * c(0.5, 0.0);
        t.matrix = Operator::from_matrix(hat)?.with_support(t.support.clone());
        t.factors = None;
        total += lambda;
    }
    Ok((out, total))
}

/// Flip the carrier (edges <-> vertices). Supported shapes: a square L×L
/// edges torus, whose dual is the L×2L vertices torus with twist L, and that
/// twisted torus back. Supports are remapped site by site; term matrices and
/// their support order are unchanged, so dualizing twice is the identity.
pub fn dualize(inst: &Instance) -> Result<Instance> {
    let lat = inst.lattice;
    if lat.boundary != Boundary::Torus {
        return Err(ModelError::UnsupportedGeometry(
            "open lattices: the rotated image of an open grid is not a rectangular grid".into(),
        ));
    }
    let (map, new_lat): (Vec<usize>, Lattice2D) = match lat.carrier {
        Carrier::Edges => {
            if lat.rows != lat.cols {
                return Err(ModelError::UnsupportedGeometry(format!(
                    "edges torus must be square, got {}x{}",
                    lat.rows, lat.cols
                )));
            }
            let l = lat.rows;
            let new_lat = Lattice2D {
                rows: l,
                cols: 2 * l,
                boundary: Boundary::Torus,
                carrier: Carrier::Vertices,
                twist: l,
            };
            let mut map = vec![0usize; lat.site_count()];
            for r in 0..l {
                for cc in 0..l {
                    map[lat.h_edge(r, cc)] = rotated_site(2 * r as i64, 2 * cc as i64 + 1, l);
                    map[lat.v_edge(r, cc)] = rotated_site(2 * r as i64 + 1, 2 * cc as i64, l);
                }
            }
            (map, new_lat)
        }
        Carrier::Vertices => {
            let l = lat.rows;
            if lat.cols != 2 * l || lat.twist != l {
                return Err(ModelError::UnsupportedGeometry(format!(
                    "vertices torus must be L x 2L with twist L, got {}x{} twist {}",
                    lat.rows, lat.cols, lat.twist
                )));
            }
            let new_lat = Lattice2D::new(l, l, Boundary::Torus, Carrier::Edges);
            let mut map = vec![0usize; lat.site_count()];
            for row in 0..l {
                for a in 0..2 * l {
                    let (b, a) = (row as i64, a as i64);
                    let x = (a + b + 1).rem_euclid(2 * l as i64) as usize;
                    let y = (a - b).rem_euclid(2 * l as i64) as usize;
                    let site = if y % 2 == 0 {
                        new_lat.h_edge(y / 2, (x - 1) / 2)
                    } else {
                        new_lat.v_edge((y - 1) / 2, x / 2)
                    };
                    map[lat.vertex_id(row, a as usize)] = site;
                }
            }
            (map, new_lat)
        }
    };
    let mut dims = vec![0usize; inst.qudit_dims.len()];
    for (old, &new) in map.iter().enumerate() {
        dims[new] = inst.qudit_dims[old];
    }
    let terms = inst
        .terms
        .iter()
        .map(|t| {
            let support: Vec<usize> = t.support.iter().map(|&s| map[s]).collect();
            Term {
                id: t.id,
                support: support.clone(),
                matrix: t.matrix.clone().with_support(support.clone()),
                factors: t.factors.as_ref().map(|fs| {
                    fs.iter()
                        .zip(&support)
                        .map(|(f, &s)| f.clone().with_support(vec![s]))
                        .collect()
                }),
            }
        })
        .collect();
    let out = Instance {
        lattice: new_lat,
        qudit_dims: dims,
        terms,
        tol: inst.tol,
    };
    out.validate_structure()?;
    Ok(out)
}

// Edge midpoint at doubled coordinates (y, x) -> site of the L x 2L twisted torus.
fn rotated_site(y: i64, x: i64, l: usize) -> usize {
    let l = l as i64;
    let a = (x + y - 1).div_euclid(2);
    let b = (x - y - 1).div_euclid(2);
    let row = b.rem_euclid(l);
    let k = (b - row) / l;
    let col = (a - k * l).rem_euclid(2 * l);
    (row * 2 * l + col) as usize
}

/// The 2×2 toric code on the edges of a torus in projected form: each star
/// and plaquette term is (I - X⊗4)/2 or (I - Z⊗4)/2.
pub fn toric_code_2x2() -> Instance {
    let lat = Lattice2D::new(2, 2, Boundary::Torus, Carrier::Edges);
    let x = linalg::pauli_x();
    let z = linalg::pauli_z();
    let mut terms = Vec::new();
    for (id, cell) in lat.cells().into_iter().enumerate() {
        let p = match cell.kind {
            CellKind::Star => &x,
            CellKind::Plaquette => &z,
        };
        let s = tensor_all(&[p.clone(), p.clone(), p.clone(), p.clone()]).expect("16-dim");
        let m = (CMat::identity(16, 16) - s.matrix()) * c(0.5, 0.0);
        terms.push(Term::new(id as TermId, cell.sites.clone(), m));
    }
    Instance::new(lat, vec![2; lat.site_count()], terms, Tolerance::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{pauli_x, pauli_z, tensor};

    #[test]
    fn toric_code_shape() {
        let t = toric_code_2x2();
        assert_eq!(t.site_count(), 8);
        assert_eq!(t.terms.len(), 8);
        t.validate().unwrap();
        let rep = check_commuting(&t);
        assert!(rep.max_norm <= 1e-12);
    }

    #[test]
    fn round_trip_is_exact() {
        let t = toric_code_2x2();
        let back = Instance::from_json_str(&t.to_json_string()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn non_commuting_pair_is_reported() {
        let lat = Lattice2D::new(2, 3, Boundary::Open, Carrier::Vertices);
        let xi = tensor(&pauli_x(), &Operator::identity(2)).unwrap();
        let zi = tensor(&pauli_z(), &Operator::identity(2)).unwrap();
        let a = Term::new(0, vec![1, 0], xi.into_matrix());
        let b = Term::new(1, vec![1, 2], zi.into_matrix());
        let inst = Instance::new(lat, vec![2; 6], vec![a, b], Tolerance::default());
        match inst.validate() {
            Err(ModelError::Validation(ValidationIssue::NonCommuting { a, b, norm })) => {
                assert_eq!((a, b), (0, 1));
                // [X, Z] = -2iY on the shared qubit, tensored with I on two more.
                assert!((norm - 4.0 * 2f64.sqrt()).abs() < 1e-12, "norm {norm}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_site_commutator_norm() {
        let lat = Lattice2D::new(2, 2, Boundary::Open, Carrier::Vertices);
        let a = Term::new(0, vec![0], pauli_x().into_matrix());
        let b = Term::new(1, vec![0], pauli_z().into_matrix());
        let inst = Instance::new(lat, vec![2; 4], vec![a.clone(), b.clone()], Tolerance::default());
        assert!((commutator_norm(&inst, &a, &b) - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        let d = Term::new(2, vec![3], pauli_z().into_matrix());
        assert_eq!(commutator_norm(&inst, &a, &d), 0.0);
    }

    #[test]
    fn empty_instance_is_valid() {
        let lat = Lattice2D::new(2, 2, Boundary::Open, Carrier::Vertices);
        Instance::new(lat, vec![2; 4], vec![], Tolerance::default()).validate().unwrap();
    }

    #[test]
    fn projection_reduce_examples() {
        let lat = Lattice2D::new(2, 2, Boundary::Open, Carrier::Vertices);
        let t = Term::new(0, vec![0], Operator::diag(&[-1.0, 2.0]).into_matrix());
        let inst = Instance::new(lat, vec![2; 4], vec![t], Tolerance::default());
        let mut w = ProjectionWitness::default();
        w.eigenvalues.insert(0, -1.0);
        let (red, sum) = projection_reduce(&inst, &w).unwrap();
        assert_eq!(sum, -1.0);
        assert!(red.terms[0].matrix.approx_eq(&Operator::diag(&[0.0, 1.0]), 1e-14));
        w.eigenvalues.insert(0, 5.0);
        assert!(matches!(projection_reduce(&inst, &w), Err(ModelError::BadEigenvalue(0, _))));
    }

    #[test]
    fn dual_of_toric_code() {
        let t = toric_code_2x2();
        let d = dualize(&t).unwrap();
        assert_eq!(d.lattice.carrier, Carrier::Vertices);
        assert_eq!(d.site_count(), 8);
        assert_eq!(d.terms.len(), 8);
        d.validate().unwrap();
        // Every term sits on a full plaquette of the twisted torus.
        let cells = d.lattice.cells();
        for term in &d.terms {
            let mut s = term.support.clone();
            s.sort();
            assert!(cells.iter().any(|c| {
                let mut cs = c.sites.clone();
                cs.sort();
                cs == s
            }));
        }
        assert_eq!(dualize(&d).unwrap(), t);
    }

    #[test]
    fn open_grids_are_rejected() {
        let lat = Lattice2D::new(3, 3, Boundary::Open, Carrier::Vertices);
        let inst = Instance::new(lat, vec![2; 9], vec![], Tolerance::default());
        assert!(matches!(dualize(&inst), Err(ModelError::UnsupportedGeometry(_))));
    }
}
