//! Removable sites and the trace evaluation tr ∏_p (I - p).
//!
//! Terms are split into two colors so that terms of one color pairwise meet
//! in at most one site: checkerboard plaquette parity on a vertex lattice,
//! stars versus plaquettes on an edge lattice. Then ∏(I - p) = B · W with B
//! the black product and W the white one. Each site is eliminated by a
//! per-term channel (block sandwich, weighted partial trace or plain partial
//! trace) except FULL sites, which survive as the bonds of a graph of degree
//! at most two; that graph is contracted as paths and cycles.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::algebra::{induced_algebra, split_left, split_right, structure_decompose, AlgebraError};
use crate::budget::{Budget, BudgetExceeded};
use crate::linalg::{c, canonical_isometry, compress_local, rank, top_singular_triple, CMat, CVec, C64};
use crate::model::{Boundary, Carrier, CellKind, Instance, TermId};
use crate::reduction::site_commutator_norm;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RemovalError {
    #[error("site {site}: illegal commuting pattern ({reason})")]
    IllegalPattern { site: usize, reason: String },
    #[error("no block choice given for site {0}")]
    MissingWitness(usize),
    #[error("site {site}: rank(P_{i} P'_{j}) exceeds 1")]
    RankTooHigh { site: usize, i: usize, j: usize },
    #[error("term {0} has more than two surviving bonds or shares a bond with a same-color term")]
    DegreeViolation(TermId),
    #[error("bad block choice: {0}")]
    BadWitness(String),
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Budget(#[from] BudgetExceeded),
}

pub type Result<T> = std::result::Result<T, RemovalError>;

/// Chosen (block_i, block_j) per R1 site.
pub type BlockChoice = BTreeMap<usize, (usize, usize)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Color {
    Black,
    White,
}

/// Color of every term (indexed like `inst.terms`).
pub fn term_colors(inst: &Instance) -> Result<Vec<Color>> {
    let lat = inst.lattice;
    if lat.carrier == Carrier::Vertices && lat.boundary == Boundary::Torus {
        // Faces across the row wrap must alternate: rows - twist even.
        if lat.cols % 2 != 0 || lat.rows % 2 != lat.twist % 2 {
            return Err(RemovalError::UnsupportedGeometry(format!(
                "a {}x{} torus with twist {} has no checkerboard coloring",
                lat.rows, lat.cols, lat.twist
            )));
        }
    }
    let cells = lat.cells();
    inst.terms
        .iter()
        .map(|t| {
            let k = lat.cell_of(&t.support).ok_or_else(|| {
                RemovalError::UnsupportedGeometry(format!("term {} lies in no plaquette", t.id))
            })?;
            let cell = &cells[k];
            Ok(match (lat.carrier, cell.kind) {
                (Carrier::Edges, CellKind::Star) => Color::Black,
                (Carrier::Edges, CellKind::Plaquette) => Color::White,
                _ if (cell.row + cell.col) % 2 == 0 => Color::Black,
                _ => Color::White,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TagKind {
    TrivialDim1,
    R1,
    R2,
    Full,
}

/// How one color class of terms sits on a site.
#[derive(Clone, Debug, Serialize)]
pub struct GroupView {
    /// Term indices (into `inst.terms`) of this color acting on the site.
    #[serde(skip)]
    pub terms: Vec<usize>,
    pub term_ids: Vec<TermId>,
    /// Which terms have a trivial, a full, or some other induced algebra.
    pub nontrivial: Vec<TermId>,
    pub full: Vec<TermId>,
    /// Block profile of the better induced decomposition (empty if none acts).
    pub way: Vec<usize>,
    #[serde(skip)]
    pub projectors: Vec<CMat>,
    /// Per block, the term acting non-trivially there (None if none does);
    /// only filled when at most one does.
    pub designated: Vec<Option<TermId>>,
    pub at_most_one_per_block: bool,
    #[serde(skip)]
    split: Option<(usize, usize, CMat)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RemovabilityTag {
    pub site: usize,
    pub kind: TagKind,
    pub black: GroupView,
    pub white: GroupView,
    /// rank(P_i P'_j) for R1 sites.
    pub ranks: Vec<Vec<usize>>,
}

impl RemovabilityTag {
    pub fn block_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.ranks.iter().enumerate() {
            for (j, &r) in row.iter().enumerate() {
                if r > 0 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

// Is the term of index k acting as P ⊗ (something) on the block of `p`?
fn trivial_on_block(inst: &Instance, k: usize, site: usize, p: &CMat) -> bool {
    let t = &inst.terms[k];
    let pos = t.position(site).expect("term acts on site");
    let dims = inst.dims_of(&t.support);
    let v = canonical_isometry(p);
    let r = v.ncols();
    if r <= 1 {
        return true;
    }
    // Restrict to the block and test that the block factor is the identity.
    let m = compress_local(t.matrix.matrix(), &dims, pos, &v);
    let mut bdims = dims.clone();
    bdims[pos] = r;
    let alg = crate::algebra::induced_algebra_of(&m, &bdims, pos, &inst.tol);
    alg.is_trivial()
}

fn group_view(inst: &Instance, site: usize, terms: Vec<usize>) -> Result<GroupView> {
    let d = inst.dim(site);
    let mut nontrivial = Vec::new();
    let mut full = Vec::new();
    let mut best: Option<crate::algebra::BlockDecomposition> = None;
    for &k in &terms {
        let alg = induced_algebra(inst, &inst.terms[k], site)?;
        if alg.is_trivial() {
            continue;
        }
        nontrivial.push(k);
        if alg.is_full() {
            full.push(inst.terms[k].id);
        }
        let dec = structure_decompose(&alg, &inst.tol)?;
        match &best {
            Some(b) if b.blocks.len() >= dec.blocks.len() => {}
            _ => best = Some(dec),
        }
    }
    let (projectors, way, split) = match &best {
        None => (vec![CMat::identity(d, d)], Vec::new(), None),
        Some(dec) => {
            let split = if dec.blocks.len() == 1 {
                let b = &dec.blocks[0];
                Some((b.d1, b.d2, b.unitary.clone()))
            } else {
                None
            };
            (dec.projectors(), dec.profile(), split)
        }
    };
    for &k in &terms {
        let t = &inst.terms[k];
        let scale = t.matrix.frobenius_norm().max(1.0);
        for p in &projectors {
            if site_commutator_norm(inst, t, site, p) > inst.tol.eps_eq * scale {
                return Err(RemovalError::IllegalPattern {
                    site,
                    reason: format!("term {} breaks its own color's decomposition", t.id),
                });
            }
        }
    }
    let mut designated = Vec::with_capacity(projectors.len());
    let mut at_most_one = true;
    for p in &projectors {
        let acting: Vec<usize> = nontrivial
            .iter()
            .copied()
            .filter(|&k| !trivial_on_block(inst, k, site, p))
            .collect();
        if acting.len() > 1 {
            at_most_one = false;
        }
        designated.push(acting.first().map(|&k| inst.terms[k].id));
    }
    Ok(GroupView {
        term_ids: terms.iter().map(|&k| inst.terms[k].id).collect(),
        terms,
        nontrivial: nontrivial.iter().map(|&k| inst.terms[k].id).collect(),
        full,
        way,
        projectors,
        designated,
        at_most_one_per_block: at_most_one,
        split,
    })
}

// The group can be traced out term by term when at most one of its terms
// acts, or when a single-block split (d1, d2, U) puts every acting term on
// one tensor factor with at most one term per factor.
fn split_is_valid(inst: &Instance, site: usize, g: &GroupView) -> bool {
    if g.nontrivial.len() <= 1 {
        return true;
    }
    let Some((d1, d2, u)) = &g.split else {
        return false;
    };
    let mut left = 0;
    let mut right = 0;
    for &k in &g.terms {
        let t = &inst.terms[k];
        let Ok(alg) = induced_algebra(inst, t, site) else { return false };
        if alg.is_trivial() {
            continue;
        }
        let conj: Vec<CMat> = alg.basis.iter().map(|b| u * b * u.adjoint()).collect();
        let eps = inst.tol.eps_eq.max(1e-9) * 10.0;
        if conj.iter().all(|m| split_left(m, *d1, *d2).1 <= eps) {
            left += 1;
        } else if conj.iter().all(|m| split_right(m, *d1, *d2).1 <= eps) {
            right += 1;
        } else {
            return false;
        }
    }
    left <= 1 && right <= 1
}

/// Classify every site.
pub fn tag_sites(inst: &Instance) -> Result<Vec<RemovabilityTag>> {
    let colors = term_colors(inst)?;
    (0..inst.site_count()).map(|q| tag_site(inst, &colors, q)).collect()
}

pub fn tag_site(inst: &Instance, colors: &[Color], site: usize) -> Result<RemovabilityTag> {
    let on = inst.terms_on(site);
    let black_terms: Vec<usize> = on.iter().copied().filter(|&k| colors[k] == Color::Black).collect();
    let white_terms: Vec<usize> = on.iter().copied().filter(|&k| colors[k] == Color::White).collect();
    let black = group_view(inst, site, black_terms)?;
    let white = group_view(inst, site, white_terms)?;
    let mut tag = RemovabilityTag {
        site,
        kind: TagKind::TrivialDim1,
        black,
        white,
        ranks: Vec::new(),
    };
    if inst.dim(site) == 1 {
        return Ok(tag);
    }
    let (b, w) = (&tag.black, &tag.white);
    let split_ok = (b.nontrivial.is_empty() && split_is_valid(inst, site, w))
        || (w.nontrivial.is_empty() && split_is_valid(inst, site, b));
    if split_ok {
        tag.kind = TagKind::R2;
        return Ok(tag);
    }
    if b.at_most_one_per_block && w.at_most_one_per_block {
        let ranks: Vec<Vec<usize>> = b
            .projectors
            .iter()
            .map(|p| w.projectors.iter().map(|pp| rank(&(p * pp), 1e-8)).collect())
            .collect();
        if ranks.iter().flatten().all(|&r| r <= 1) {
            tag.kind = TagKind::R1;
            tag.ranks = ranks;
            return Ok(tag);
        }
    }
    if !b.full.is_empty() && !w.full.is_empty() {
        tag.kind = TagKind::Full;
        return Ok(tag);
    }
    Err(RemovalError::IllegalPattern {
        site,
        reason: format!(
            "black way {:?}, white way {:?}: neither removable nor full",
            tag.black.way, tag.white.way
        ),
    })
}

/// A surviving term after site elimination: an operator on its FULL sites.
#[derive(Clone, Debug)]
pub struct ChainNode {
    pub term: TermId,
    pub color: Color,
    pub sites: Vec<usize>,
    pub dims: Vec<usize>,
    pub op: CMat,
}

enum Channel {
    /// ⟨a| X |a⟩ with an unnormalized vector.
    Sandwich(CVec),
    /// tr_q(P X) / tr P.
    Weighted(CMat),
    Keep,
}

fn apply_channel(op: &CMat, sites: &mut Vec<usize>, dims: &mut Vec<usize>, site: usize, ch: &Channel) -> CMat {
    let pos = sites.iter().position(|&s| s == site).expect("site in support");
    let out = match ch {
        Channel::Keep => return op.clone(),
        Channel::Sandwich(a) => {
            let v = CMat::from_column_slice(a.len(), 1, a.as_slice());
            compress_local(op, dims, pos, &v)
        }
        Channel::Weighted(p) => {
            let v = canonical_isometry(p);
            let r = v.ncols();
            let mut acc: Option<CMat> = None;
            for k in 0..r {
                let col = v.columns(k, 1).into_owned();
                let part = compress_local(op, dims, pos, &col);
                acc = Some(match acc {
                    None => part,
                    Some(a) => a + part,
                });
            }
            acc.expect("nonzero projector") / c(r as f64, 0.0)
        }
    };
    sites.remove(pos);
    dims.remove(pos);
    out
}

/// The summand of tr ∏(I - p) selected by one block pair (i, j) per R1 site.
pub fn eliminate_and_contract(
    inst: &Instance,
    tags: &[RemovabilityTag],
    witness: &BTreeMap<usize, (usize, usize)>,
) -> Result<f64> {
    let colors = term_colors(inst)?;
    if tags.len() != inst.site_count() || tags.iter().enumerate().any(|(q, t)| t.site != q) {
        return Err(RemovalError::BadWitness("tags must list every site in order".into()));
    }
    let mut factor = 1.0;
    // Per site: (alpha, beta) for R1 sites.
    let mut vecs: BTreeMap<usize, (CVec, CVec)> = BTreeMap::new();
    for tag in tags {
        match tag.kind {
            TagKind::R1 => {
                let &(i, j) = witness.get(&tag.site).ok_or(RemovalError::MissingWitness(tag.site))?;
                let p = tag.black.projectors.get(i);
                let pp = tag.white.projectors.get(j);
                let (Some(p), Some(pp)) = (p, pp) else {
                    return Err(RemovalError::BadWitness(format!("site {}: no block pair ({i}, {j})", tag.site)));
                };
                let prod = p * pp;
                if rank(&prod, 1e-8) > 1 {
                    return Err(RemovalError::RankTooHigh { site: tag.site, i, j });
                }
                let (s, u, v) = top_singular_triple(&prod);
                let alpha = u * c(s, 0.0);
                if tag.black.terms.is_empty() {
                    factor *= alpha.norm_squared();
                }
                if tag.white.terms.is_empty() {
                    factor *= v.norm_squared();
                }
                vecs.insert(tag.site, (alpha, v));
            }
            TagKind::R2 | TagKind::TrivialDim1 => factor *= inst.dim(tag.site) as f64,
            TagKind::Full => {}
        }
    }
    let mut nodes = Vec::with_capacity(inst.terms.len());
    for (k, t) in inst.terms.iter().enumerate() {
        let n = t.matrix.dim();
        let mut op = CMat::identity(n, n) - t.matrix.matrix();
        let mut sites = t.support.clone();
        let mut dims = inst.dims_of(&t.support);
        for &q in &t.support {
            let tag = &tags[q];
            let g = match colors[k] {
                Color::Black => &tag.black,
                Color::White => &tag.white,
            };
            let ch = match tag.kind {
                TagKind::R1 => {
                    let (i, j) = witness[&q];
                    let block = if colors[k] == Color::Black { i } else { j };
                    let designated = g.designated[block].or_else(|| g.term_ids.first().copied());
                    if designated == Some(t.id) {
                        let (a, b) = &vecs[&q];
                        Channel::Sandwich(if colors[k] == Color::Black { a.clone() } else { b.clone() })
                    } else {
                        Channel::Weighted(g.projectors[block].clone())
                    }
                }
                TagKind::R2 | TagKind::TrivialDim1 => Channel::Weighted(CMat::identity(inst.dim(q), inst.dim(q))),
                TagKind::Full => {
                    if g.nontrivial.len() > 1 {
                        return Err(RemovalError::DegreeViolation(t.id));
                    }
                    if g.nontrivial.first() == Some(&t.id) {
                        Channel::Keep
                    } else {
                        Channel::Weighted(CMat::identity(inst.dim(q), inst.dim(q)))
                    }
                }
            };
            op = apply_channel(&op, &mut sites, &mut dims, q, &ch);
        }
        nodes.push(ChainNode {
            term: t.id,
            color: colors[k],
            sites,
            dims,
            op,
        });
    }
    Ok(factor * contract_chains(&nodes)?)
}

// Index of the (row a, col b) entry at one site, as seen from a node of the
// given color: black pairs (a, b), white pairs (b, a), so that bonds match.
fn pair_index(color: Color, a: usize, b: usize, d: usize) -> usize {
    match color {
        Color::Black => a * d + b,
        Color::White => b * d + a,
    }
}

// Node operator as a tensor over its sites' pair indices, flattened with the
// first listed site most significant.
fn node_tensor(n: &ChainNode, order: &[usize]) -> Vec<C64> {
    let k = n.sites.len();
    let pos: Vec<usize> = order
        .iter()
        .map(|s| n.sites.iter().position(|x| x == s).expect("bond site"))
        .collect();
    let odims: Vec<usize> = pos.iter().map(|&p| n.dims[p] * n.dims[p]).collect();
    let total: usize = odims.iter().product();
    let strides = crate::linalg::strides(&n.dims);
    let mut out = vec![C64::default(); total];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        let mut row = 0;
        let mut col = 0;
        for idx in (0..k).rev() {
            let pd = odims[idx];
            let pair = rem % pd;
            rem /= pd;
            let p = pos[idx];
            let d = n.dims[p];
            let (a, b) = match n.color {
                Color::Black => (pair / d, pair % d),
                Color::White => (pair % d, pair / d),
            };
            debug_assert_eq!(pair_index(n.color, a, b, d), pair);
            row += a * strides[p];
            col += b * strides[p];
        }
        *slot = n.op[(row, col)];
    }
    out
}

/// tr[(⊗ black ops)(⊗ white ops)] where each remaining site is a bond
/// between one black and one white node. Components are contracted
/// independently: paths left to right from their smallest-index end,
/// cycles closed with a trace.
pub fn contract_chains(nodes: &[ChainNode]) -> Result<f64> {
    let mut at_site: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, n) in nodes.iter().enumerate() {
        if n.sites.len() > 2 {
            return Err(RemovalError::DegreeViolation(n.term));
        }
        for &s in &n.sites {
            at_site.entry(s).or_default().push(k);
        }
    }
    for ends in at_site.values() {
        if ends.len() != 2 || nodes[ends[0]].color == nodes[ends[1]].color {
            return Err(RemovalError::DegreeViolation(nodes[ends[0]].term));
        }
    }
    let other = |k: usize, s: usize| -> usize {
        let e = &at_site[&s];
        if e[0] == k {
            e[1]
        } else {
            e[0]
        }
    };
    let mut seen = vec![false; nodes.len()];
    let mut total = C64::new(1.0, 0.0);
    // Paths and isolated nodes first, in node order; whatever is left is cycles.
    for start in 0..nodes.len() {
        if seen[start] || nodes[start].sites.len() == 2 {
            continue;
        }
        seen[start] = true;
        let n0 = &nodes[start];
        if n0.sites.is_empty() {
            total *= n0.op[(0, 0)];
            continue;
        }
        let mut bond = n0.sites[0];
        let mut vec = node_tensor(n0, &[bond]);
        let mut cur = start;
        loop {
            let next = other(cur, bond);
            seen[next] = true;
            let nn = &nodes[next];
            if nn.sites.len() == 1 {
                let t = node_tensor(nn, &[bond]);
                total *= vec.iter().zip(&t).map(|(a, b)| a * b).sum::<C64>();
                break;
            }
            let out = if nn.sites[0] == bond { nn.sites[1] } else { nn.sites[0] };
            vec = mat_vec(&vec, &node_tensor(nn, &[bond, out]));
            bond = out;
            cur = next;
        }
    }
    for start in 0..nodes.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let n0 = &nodes[start];
        let first = n0.sites[0];
        let mut bond = n0.sites[1];
        let t0 = node_tensor(n0, &[first, bond]);
        let d_first = n0.dims[n0.sites.iter().position(|&s| s == first).expect("own site")];
        let rows = d_first * d_first;
        let mut m = CMat::from_row_slice(rows, t0.len() / rows, &t0);
        let mut cur = start;
        loop {
            let next = other(cur, bond);
            if next == start {
                break;
            }
            seen[next] = true;
            let nn = &nodes[next];
            let out = if nn.sites[0] == bond { nn.sites[1] } else { nn.sites[0] };
            let t = node_tensor(nn, &[bond, out]);
            let r = m.ncols();
            let nm = CMat::from_row_slice(r, t.len() / r, &t);
            m *= nm;
            bond = out;
            cur = next;
        }
        total *= m.trace();
    }
    Ok(total.re)
}

fn mat_vec(v: &[C64], t: &[C64]) -> Vec<C64> {
    let r = v.len();
    let cols = t.len() / r;
    let mut out = vec![C64::default(); cols];
    for (i, vi) in v.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += vi * t[i * cols + j];
        }
    }
    out
}

/// Positivity cutoff for summands: 1e-8 times the product of site dims.
pub fn eps_pos(inst: &Instance) -> f64 {
    1e-8 * inst.qudit_dims.iter().map(|&d| d as f64).product::<f64>()
}

/// Every R1 block-pair choice with rank(P_i P'_j) = 1, in lexicographic order
/// of (site, i, j).
pub fn all_witnesses(tags: &[RemovabilityTag]) -> Vec<BTreeMap<usize, (usize, usize)>> {
    let r1: Vec<&RemovabilityTag> = tags.iter().filter(|t| t.kind == TagKind::R1).collect();
    let mut out = vec![BTreeMap::new()];
    for tag in r1 {
        let pairs = tag.block_pairs();
        let mut next = Vec::with_capacity(out.len() * pairs.len());
        for w in &out {
            for &p in &pairs {
                let mut w2 = w.clone();
                w2.insert(tag.site, p);
                next.push(w2);
            }
        }
        out = next;
    }
    out
}

/// Depth-first search for a block choice whose summand exceeds eps_pos.
pub fn find_positive_witness(
    inst: &Instance,
    tags: &[RemovabilityTag],
    budget: &mut Budget,
) -> Result<Option<(BlockChoice, f64)>> {
    let r1: Vec<&RemovabilityTag> = tags.iter().filter(|t| t.kind == TagKind::R1).collect();
    let cut = eps_pos(inst);
    let mut choice: Vec<usize> = vec![0; r1.len()];
    let pairs: Vec<Vec<(usize, usize)>> = r1.iter().map(|t| t.block_pairs()).collect();
    if pairs.iter().any(|p| p.is_empty()) {
        return Ok(None);
    }
    loop {
        budget.tick()?;
        let w: BTreeMap<usize, (usize, usize)> =
            r1.iter().zip(&choice).zip(&pairs).map(|((t, &c), p)| (t.site, p[c])).collect();
        let v = eliminate_and_contract(inst, tags, &w)?;
        if v > cut {
            return Ok(Some((w, v)));
        }
        // Odometer increment, last site fastest.
        let mut k = choice.len();
        loop {
            if k == 0 {
                return Ok(None);
            }
            k -= 1;
            choice[k] += 1;
            if choice[k] < pairs[k].len() {
                break;
            }
            choice[k] = 0;
        }
    }
}
