//! Interface decomposition: equivalence classes of interface dofs (vertex /
//! edge / face), restriction maps, the partially coupled space layout, and
//! the fully redundant signed jump operator B.
//!
//! An equivalence class is a maximal set of interface dofs shared by the
//! same set of subdomains. Classes shared by exactly two subdomains are
//! faces (the only non-vertex kind in 2D); classes shared by more than two
//! whose dofs form a 1D lattice chain are edges; single dofs at chain
//! endpoints are vertices.

use crate::mesh::StructuredMesh;
use crate::{DMat, DVec, Error, Result};
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClassKind {
    Vertex,
    Edge,
    Face,
}

#[derive(Debug, Clone)]
pub struct EquivalenceClass {
    pub id: usize,
    pub kind: ClassKind,
    /// Sorted ids of the sharing subdomains I(C).
    pub sharers: Vec<usize>,
    /// Global node ids of the class-interior dofs in lexicographic order;
    /// the same order is used by every sharing subdomain.
    pub nodes: Vec<usize>,
}

impl EquivalenceClass {
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn sharer_pos(&self, subdomain: usize) -> Option<usize> {
        self.sharers.binary_search(&subdomain).ok()
    }

    /// All unordered sharer pairs, each as (position, position) into
    /// `sharers`, in sorted order.
    pub fn pair_positions(&self) -> Vec<(usize, usize)> {
        let q = self.sharers.len();
        let mut out = Vec::with_capacity(q * (q - 1) / 2);
        for a in 0..q {
            for b in (a + 1)..q {
                out.push((a, b));
            }
        }
        out
    }
}

/// One line of the class report consumed by the CLI's pnum accounting.
#[derive(Debug, Serialize)]
pub struct ClassReportEntry {
    pub id: usize,
    pub kind: ClassKind,
    pub sharing: usize,
    pub dofs: usize,
    /// Set on edges shared by a number of subdomains other than the three
    /// the edge formulas were originally stated for.
    pub nonstandard_sharing: bool,
}

/// Classified interface with the maps needed downstream.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub classes: Vec<EquivalenceClass>,
    /// Per subdomain: sorted global ids of its interface dofs.
    pub sub_interface_nodes: Vec<Vec<usize>>,
    /// Per class, aligned with `sharers`: positions of the class dofs inside
    /// each sharer's interface ordering.
    pub class_local: Vec<Vec<Vec<usize>>>,
    /// Per subdomain: (class id, sharer position) of every class touching it.
    pub sub_classes: Vec<Vec<(usize, usize)>>,
}

impl Decomposition {
    pub fn num_faces(&self) -> usize {
        self.classes.iter().filter(|c| c.kind == ClassKind::Face).count()
    }

    pub fn num_edges(&self) -> usize {
        self.classes.iter().filter(|c| c.kind == ClassKind::Edge).count()
    }

    pub fn num_vertices(&self) -> usize {
        self.classes.iter().filter(|c| c.kind == ClassKind::Vertex).count()
    }

    /// The explicit constant of the condition-number bound:
    /// `8 * max(max_i N_F(i)^2, max_i N_E(i)^2 * max_{E in E(i)} N_I(E))`.
    pub fn bound_constant(&self) -> f64 {
        let nsub = self.sub_interface_nodes.len();
        let mut nf = vec![0usize; nsub];
        let mut ne = vec![0usize; nsub];
        for c in &self.classes {
            match c.kind {
                ClassKind::Face => {
                    for &s in &c.sharers {
                        nf[s] += 1;
                    }
                }
                ClassKind::Edge => {
                    for &s in &c.sharers {
                        ne[s] += 1;
                    }
                }
                ClassKind::Vertex => {}
            }
        }
        let mut max_term_e = 0usize;
        for c in &self.classes {
            if c.kind == ClassKind::Edge {
                for &s in &c.sharers {
                    max_term_e = max_term_e.max(ne[s] * ne[s] * c.sharers.len());
                }
            }
        }
        let max_f = nf.iter().map(|&x| x * x).max().unwrap_or(0);
        8.0 * max_f.max(max_term_e).max(1) as f64
    }

    pub fn class_report(&self) -> Vec<ClassReportEntry> {
        self.classes
            .iter()
            .map(|c| ClassReportEntry {
                id: c.id,
                kind: c.kind,
                sharing: c.sharers.len(),
                dofs: c.size(),
                nonstandard_sharing: c.kind == ClassKind::Edge && c.sharers.len() != 3,
            })
            .collect()
    }
}

/// Group interface dofs into equivalence classes by sharing set and detect
/// the kind of each class.
pub fn classify_interface(mesh: &StructuredMesh) -> Result<Decomposition> {
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for node in 0..mesh.num_nodes() {
        if mesh.is_boundary_node(node) {
            continue;
        }
        let sharers = mesh.node_sharers(node);
        if sharers.len() > 1 {
            groups.entry(sharers).or_default().push(node);
        }
    }

    let mut classes = Vec::with_capacity(groups.len());
    for (sharers, mut nodes) in groups {
        nodes.sort_unstable();
        let kind = detect_kind(mesh, &sharers, &nodes)?;
        classes.push(EquivalenceClass {
            id: classes.len(),
            kind,
            sharers,
            nodes,
        });
    }

    let nsub = mesh.num_subdomains();
    let mut sub_interface_nodes: Vec<Vec<usize>> = vec![Vec::new(); nsub];
    for c in &classes {
        for &s in &c.sharers {
            sub_interface_nodes[s].extend(&c.nodes);
        }
    }
    for list in &mut sub_interface_nodes {
        list.sort_unstable();
        list.dedup();
    }

    let mut class_local = Vec::with_capacity(classes.len());
    let mut sub_classes: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nsub];
    for c in &classes {
        let mut per_sharer = Vec::with_capacity(c.sharers.len());
        for (pos, &s) in c.sharers.iter().enumerate() {
            let locals: Vec<usize> = c
                .nodes
                .iter()
                .map(|n| sub_interface_nodes[s].binary_search(n).unwrap())
                .collect();
            per_sharer.push(locals);
            sub_classes[s].push((c.id, pos));
        }
        class_local.push(per_sharer);
    }

    Ok(Decomposition {
        classes,
        sub_interface_nodes,
        class_local,
        sub_classes,
    })
}

fn detect_kind(mesh: &StructuredMesh, sharers: &[usize], nodes: &[usize]) -> Result<ClassKind> {
    if sharers.len() == 2 {
        return Ok(ClassKind::Face);
    }
    // Subdomain corner points (every coordinate on the coarse lattice) are
    // vertices; chain interiors are edges even when the chain has one dof.
    let corner = |n: usize| {
        let c = mesh.node_coord(n);
        (0..mesh.dim).all(|d| c[d] % mesh.m == 0)
    };
    if nodes.len() == 1 {
        return Ok(if corner(nodes[0]) {
            ClassKind::Vertex
        } else {
            ClassKind::Edge
        });
    }
    // More than two sharers off the coarse lattice: must be a 1D chain.
    let coords: Vec<[usize; 3]> = nodes.iter().map(|&n| mesh.node_coord(n)).collect();
    let mut varying = None;
    for d in 0..mesh.dim {
        if coords.iter().any(|c| c[d] != coords[0][d]) {
            if varying.is_some() {
                return Err(Error::Config(format!(
                    "class with sharers {sharers:?} is not a lattice chain"
                )));
            }
            varying = Some(d);
        }
    }
    let d = varying.ok_or_else(|| Error::Config("degenerate edge class".into()))?;
    let mut vals: Vec<usize> = coords.iter().map(|c| c[d]).collect();
    vals.sort_unstable();
    for w in vals.windows(2) {
        if w[1] != w[0] + 1 {
            return Err(Error::Config(format!(
                "edge class with sharers {sharers:?} has a gap in its chain"
            )));
        }
    }
    Ok(ClassKind::Edge)
}

/// Layout of a partially coupled space W-tilde: per class, the first `k`
/// transformed coordinates are primal (assembled once, shared by all
/// sharers) and the rest are dual (one copy per sharer). Vertex classes are
/// wholly primal (`k = 1`). Index order: all dual blocks by subdomain, then
/// the primal block.
#[derive(Debug, Clone)]
pub struct WSpace {
    /// Primal coordinate count per class.
    pub k: Vec<usize>,
    /// Offset of each class inside the primal block.
    pub primal_offset: Vec<usize>,
    pub num_primal: usize,
    pub num_dual: usize,
    /// Per subdomain: (class id, sharer pos, dual offset, dual len).
    pub sub_dual_blocks: Vec<Vec<(usize, usize, usize, usize)>>,
    dual_base: BTreeMap<(usize, usize), usize>,
}

impl WSpace {
    pub fn new(decomp: &Decomposition, k: Vec<usize>) -> Result<Self> {
        if k.len() != decomp.classes.len() {
            return Err(Error::DimensionMismatch("primal count list".into()));
        }
        for c in &decomp.classes {
            if c.kind == ClassKind::Vertex && k[c.id] != 1 {
                return Err(Error::Config("vertex classes must be primal".into()));
            }
            if k[c.id] > c.size() {
                return Err(Error::Config(format!(
                    "class {} has {} dofs but {} primal requested",
                    c.id,
                    c.size(),
                    k[c.id]
                )));
            }
        }
        let mut primal_offset = vec![0usize; k.len()];
        let mut num_primal = 0;
        for c in &decomp.classes {
            primal_offset[c.id] = num_primal;
            num_primal += k[c.id];
        }
        let mut num_dual = 0;
        let mut sub_dual_blocks = Vec::with_capacity(decomp.sub_classes.len());
        let mut dual_base = BTreeMap::new();
        for (s, touched) in decomp.sub_classes.iter().enumerate() {
            let mut blocks = Vec::new();
            for &(cid, pos) in touched {
                let len = decomp.classes[cid].size() - k[cid];
                if len > 0 {
                    dual_base.insert((s, cid), num_dual);
                    blocks.push((cid, pos, num_dual, len));
                    num_dual += len;
                }
            }
            sub_dual_blocks.push(blocks);
        }
        Ok(WSpace {
            k,
            primal_offset,
            num_primal,
            num_dual,
            sub_dual_blocks,
            dual_base,
        })
    }

    /// Vertex-primal layout: every face/edge dof dual.
    pub fn vertex_primal(decomp: &Decomposition) -> Self {
        let k = decomp
            .classes
            .iter()
            .map(|c| if c.kind == ClassKind::Vertex { 1 } else { 0 })
            .collect();
        Self::new(decomp, k).expect("vertex-primal layout is always valid")
    }

    pub fn dim(&self) -> usize {
        self.num_dual + self.num_primal
    }

    #[inline]
    pub fn primal_index(&self, class: usize, j: usize) -> usize {
        self.num_dual + self.primal_offset[class] + j
    }

    /// W index of a dual coordinate of a class copy; `j` counts from zero
    /// within the dual part (transformed coordinate `k + j`).
    #[inline]
    pub fn dual_index(&self, sub: usize, class: usize, j: usize) -> usize {
        self.dual_base[&(sub, class)] + j
    }

    pub fn has_dual(&self, sub: usize, class: usize) -> bool {
        self.dual_base.contains_key(&(sub, class))
    }
}

/// Layout of the fully assembled interface space: one coordinate per class
/// dof, classes ascending. Works for both nodal values and transformed
/// coordinates.
#[derive(Debug, Clone)]
pub struct WHat {
    pub class_offset: Vec<usize>,
    pub dim: usize,
}

impl WHat {
    pub fn new(decomp: &Decomposition) -> Self {
        let mut class_offset = vec![0usize; decomp.classes.len()];
        let mut dim = 0;
        for c in &decomp.classes {
            class_offset[c.id] = dim;
            dim += c.size();
        }
        WHat { class_offset, dim }
    }

    #[inline]
    pub fn index(&self, class: usize, j: usize) -> usize {
        self.class_offset[class] + j
    }
}

/// Fully redundant signed jump operator. Rows come in blocks: classes in
/// ascending id order, sharer pairs in sorted order, dofs in class order.
/// Every row has one +1 and one -1 on geometrically matching dofs; primal
/// columns are zero. On an edge shared by q subdomains all q(q-1)/2 pair
/// blocks are present.
#[derive(Debug, Clone)]
pub struct JumpOperator {
    pub blocks: Vec<JumpBlock>,
    pub num_rows: usize,
}

#[derive(Debug, Clone)]
pub struct JumpBlock {
    pub class: usize,
    /// Subdomain pair (a, b), a < b; rows act as w^(a) - w^(b).
    pub pair: (usize, usize),
    /// Positions of a and b within the class sharer list.
    pub pos: (usize, usize),
    pub offset: usize,
    pub rows: usize,
}

/// Build B over the dual dofs of a vertex-primal layout.
pub fn build_jump_operator(decomp: &Decomposition) -> JumpOperator {
    let mut blocks = Vec::new();
    let mut offset = 0;
    for c in &decomp.classes {
        if c.kind == ClassKind::Vertex {
            continue;
        }
        for (pa, pb) in c.pair_positions() {
            blocks.push(JumpBlock {
                class: c.id,
                pair: (c.sharers[pa], c.sharers[pb]),
                pos: (pa, pb),
                offset,
                rows: c.size(),
            });
            offset += c.size();
        }
    }
    JumpOperator {
        blocks,
        num_rows: offset,
    }
}

impl JumpOperator {
    /// `B w`: jumps of the dual unknowns across every sharer pair. The space
    /// must be vertex-primal (faces and edges fully dual).
    pub fn apply(&self, sp: &WSpace, w: &DVec) -> DVec {
        let mut out = DVec::zeros(self.num_rows);
        for b in &self.blocks {
            for j in 0..b.rows {
                let ia = sp.dual_index(b.pair.0, b.class, j);
                let ib = sp.dual_index(b.pair.1, b.class, j);
                out[b.offset + j] = w[ia] - w[ib];
            }
        }
        out
    }

    /// `B^T mu`.
    pub fn apply_transpose(&self, sp: &WSpace, mu: &DVec) -> DVec {
        let mut out = DVec::zeros(sp.dim());
        for b in &self.blocks {
            for j in 0..b.rows {
                let ia = sp.dual_index(b.pair.0, b.class, j);
                let ib = sp.dual_index(b.pair.1, b.class, j);
                out[ia] += mu[b.offset + j];
                out[ib] -= mu[b.offset + j];
            }
        }
        out
    }

    /// `B_D w`: rows of pair (a, b) on class C carry
    /// `(D_C^(b))^T w_C^(a) - (D_C^(a))^T w_C^(b)`. `scalings[c][pos]` is the
    /// scaling matrix of sharer `pos` of class `c`.
    pub fn apply_scaled(&self, sp: &WSpace, scalings: &[Vec<DMat>], w: &DVec) -> DVec {
        let mut out = DVec::zeros(self.num_rows);
        for b in &self.blocks {
            let n = b.rows;
            let wa = DVec::from_fn(n, |j, _| w[sp.dual_index(b.pair.0, b.class, j)]);
            let wb = DVec::from_fn(n, |j, _| w[sp.dual_index(b.pair.1, b.class, j)]);
            let da = &scalings[b.class][b.pos.0];
            let db = &scalings[b.class][b.pos.1];
            let r = db.transpose() * wa - da.transpose() * wb;
            for j in 0..n {
                out[b.offset + j] = r[j];
            }
        }
        out
    }

    /// `B_D^T mu`: scatter `D_C^(b) mu` into sharer a and `-D_C^(a) mu` into
    /// sharer b for every pair block.
    pub fn apply_scaled_transpose(&self, sp: &WSpace, scalings: &[Vec<DMat>], mu: &DVec) -> DVec {
        let mut out = DVec::zeros(sp.dim());
        for b in &self.blocks {
            let n = b.rows;
            let m = DVec::from_fn(n, |j, _| mu[b.offset + j]);
            let da = &scalings[b.class][b.pos.0];
            let db = &scalings[b.class][b.pos.1];
            let ra = db * &m;
            let rb = da * &m;
            for j in 0..n {
                out[sp.dual_index(b.pair.0, b.class, j)] += ra[j];
                out[sp.dual_index(b.pair.1, b.class, j)] -= rb[j];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    #[test]
    fn classify_2d_benchmark_partition() {
        let mesh = build_mesh(2, 3, 14).unwrap();
        let d = classify_interface(&mesh).unwrap();
        assert_eq!(d.num_faces(), 12);
        assert_eq!(d.num_vertices(), 4);
        assert_eq!(d.num_edges(), 0);
        for c in &d.classes {
            if c.kind == ClassKind::Face {
                assert_eq!(c.size(), 13);
            }
        }
    }

    #[test]
    fn classify_3d_benchmark_partition() {
        let mesh = build_mesh(3, 3, 12).unwrap();
        let d = classify_interface(&mesh).unwrap();
        assert_eq!(d.num_faces(), 54);
        assert_eq!(d.num_edges(), 36);
        assert_eq!(d.num_vertices(), 8);
    }

    #[test]
    fn classify_3d_smallest() {
        let mesh = build_mesh(3, 2, 2).unwrap();
        let d = classify_interface(&mesh).unwrap();
        assert_eq!(d.num_faces(), 12);
        assert_eq!(d.num_edges(), 6);
        assert_eq!(d.num_vertices(), 1);
        for c in &d.classes {
            if c.kind == ClassKind::Edge {
                assert_eq!(c.sharers.len(), 4);
                assert_eq!(c.size(), 1);
            }
        }
    }

    #[test]
    fn classes_partition_every_interface() {
        for (dim, n, m) in [(2usize, 3usize, 4usize), (3, 2, 3)] {
            let mesh = build_mesh(dim, n, m).unwrap();
            let d = classify_interface(&mesh).unwrap();
            for s in 0..mesh.num_subdomains() {
                let total: usize = d.sub_classes[s]
                    .iter()
                    .map(|&(c, _)| d.classes[c].size())
                    .sum();
                assert_eq!(total, d.sub_interface_nodes[s].len(), "subdomain {s}");
            }
        }
    }

    #[test]
    fn jump_operator_pair_counts() {
        let mesh = build_mesh(3, 2, 2).unwrap();
        let d = classify_interface(&mesh).unwrap();
        let b = build_jump_operator(&d);
        // Each face contributes one pair block, each 4-subdomain edge six.
        let face_rows: usize = d
            .classes
            .iter()
            .filter(|c| c.kind == ClassKind::Face)
            .map(|c| c.size())
            .sum();
        let edge_rows: usize = d
            .classes
            .iter()
            .filter(|c| c.kind == ClassKind::Edge)
            .map(|c| 6 * c.size())
            .sum();
        assert_eq!(b.num_rows, face_rows + edge_rows);
    }

    #[test]
    fn jump_of_continuous_vector_is_zero() {
        let mesh = build_mesh(3, 2, 2).unwrap();
        let d = classify_interface(&mesh).unwrap();
        let sp = WSpace::vertex_primal(&d);
        let b = build_jump_operator(&d);
        // Continuous data: every copy of a class dof carries its node value.
        let mut w = DVec::zeros(sp.dim());
        for c in &d.classes {
            if c.kind == ClassKind::Vertex {
                w[sp.primal_index(c.id, 0)] = c.nodes[0] as f64;
                continue;
            }
            for &s in &c.sharers {
                for j in 0..c.size() {
                    w[sp.dual_index(s, c.id, j)] = c.nodes[j] as f64;
                }
            }
        }
        let jump = b.apply(&sp, &w);
        assert_eq!(jump.amax(), 0.0);
    }

    #[test]
    fn class_report_serializes() {
        let mesh = build_mesh(3, 2, 2).unwrap();
        let d = classify_interface(&mesh).unwrap();
        let report = d.class_report();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"kind\":\"Edge\""));
        // Structured edges here are shared by four subdomains, not three.
        assert!(json.contains("\"nonstandard_sharing\":true"));
        let faces = report.iter().filter(|e| e.kind == ClassKind::Face).count();
        assert_eq!(faces, 12);
    }

    #[test]
    fn scaled_jump_multiplicity_halves_faces() {
        let mesh = build_mesh(2, 2, 3).unwrap();
        let d = classify_interface(&mesh).unwrap();
        let sp = WSpace::vertex_primal(&d);
        let b = build_jump_operator(&d);
        let scalings: Vec<Vec<DMat>> = d
            .classes
            .iter()
            .map(|c| {
                let q = c.sharers.len() as f64;
                c.sharers
                    .iter()
                    .map(|_| DMat::identity(c.size(), c.size()) / q)
                    .collect()
            })
            .collect();
        let mut w = DVec::zeros(sp.dim());
        for i in 0..sp.dim() {
            w[i] = (i as f64).sin();
        }
        let plain = b.apply(&sp, &w);
        let scaled = b.apply_scaled(&sp, &scalings, &w);
        assert!((&scaled - &plain * 0.5).amax() < 1e-14);
    }
}
