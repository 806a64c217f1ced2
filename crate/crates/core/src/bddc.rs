//! BDDC with change of basis: the partially coupled operator S-tilde
//! assembled from transformed subdomain Schur complements, its block
//! factorization (independent dual solves plus a dense coarse problem on the
//! primal coordinates), the scaled injections, and the preconditioner
//! `M^{-1} = R~^T D~ S~^{-1} D~^T R~` operating entirely in transformed
//! coordinates.

use crate::adaptive::ChangeOfBasis;
use crate::decomp::{Decomposition, WHat, WSpace};
use crate::linalg::symmetrize;
use crate::scaling::ScalingSet;
use crate::schur::SchurOperator;
use crate::{DMat, DVec, Error, Result};
use nalgebra::{Cholesky, Dyn};

struct SubOp {
    sub: usize,
    /// Block-diagonal change of basis T_i over the local interface dofs.
    t: DMat,
    /// Transformed local Schur complement T_i^T S^(i) T_i.
    s_hat: DMat,
    /// Per local dof: (class id, coordinate index within the class).
    coords: Vec<(usize, usize)>,
    /// Classes touching this subdomain: (class id, sharer pos, local dof
    /// positions of the class coordinates).
    classes: Vec<(usize, usize, Vec<usize>)>,
    /// Local positions of dual coordinates and their W-tilde indices.
    dual_positions: Vec<usize>,
    dual_wt: Vec<usize>,
    /// Local positions of primal coordinates and their primal-block ids.
    primal_positions: Vec<usize>,
    primal_ids: Vec<usize>,
    dual_chol: Option<Cholesky<f64, Dyn>>,
    /// Primal rows by dual columns of the transformed Schur complement.
    s_pd: DMat,
}

/// Partially coupled interface operator in transformed coordinates with its
/// factorization, plus the injection maps between the assembled space, the
/// partially coupled space, and subdomain-local vectors.
pub struct PartiallyCoupledOperator {
    pub space: WSpace,
    pub what: WHat,
    subs: Vec<SubOp>,
    coarse: Cholesky<f64, Dyn>,
}

impl PartiallyCoupledOperator {
    /// Assemble and factor S-tilde. `basis[c]` must have size
    /// `classes[c].size()` and primal width `space.k[c]` (vertex classes use
    /// the trivial 1x1 basis).
    pub fn new(
        decomp: &Decomposition,
        space: WSpace,
        basis: &[ChangeOfBasis],
        schur: &[SchurOperator],
    ) -> Result<Self> {
        let what = WHat::new(decomp);
        let nsub = decomp.sub_interface_nodes.len();
        if schur.len() != nsub || basis.len() != decomp.classes.len() {
            return Err(Error::DimensionMismatch("operator assembly inputs".into()));
        }
        for c in &decomp.classes {
            if basis[c.id].size() != c.size() || basis[c.id].k != space.k[c.id] {
                return Err(Error::Config(format!(
                    "change of basis of class {} does not match the space layout",
                    c.id
                )));
            }
        }

        let mut subs = Vec::with_capacity(nsub);
        let mut coarse = DMat::zeros(space.num_primal, space.num_primal);
        for s in 0..nsub {
            let n = decomp.sub_interface_nodes[s].len();
            let mut t = DMat::identity(n, n);
            let mut coords = vec![(usize::MAX, usize::MAX); n];
            let mut classes = Vec::with_capacity(decomp.sub_classes[s].len());
            for &(cid, pos) in &decomp.sub_classes[s] {
                let locals = decomp.class_local[cid][pos].clone();
                let p = &basis[cid].p;
                for (a, &la) in locals.iter().enumerate() {
                    coords[la] = (cid, a);
                    for (b, &lb) in locals.iter().enumerate() {
                        t[(la, lb)] = p[(a, b)];
                    }
                }
                classes.push((cid, pos, locals));
            }
            let s_hat = symmetrize(&(t.transpose() * &schur[s].matrix * &t));

            let mut dual_positions = Vec::new();
            let mut dual_wt = Vec::new();
            let mut primal_positions = Vec::new();
            let mut primal_ids = Vec::new();
            for (cid, _, locals) in &classes {
                let k = space.k[*cid];
                for (a, &la) in locals.iter().enumerate() {
                    if a < k {
                        primal_positions.push(la);
                        primal_ids.push(space.primal_offset[*cid] + a);
                    } else {
                        dual_positions.push(la);
                        dual_wt.push(space.dual_index(s, *cid, a - k));
                    }
                }
            }

            let nd = dual_positions.len();
            let np = primal_positions.len();
            let s_dd = DMat::from_fn(nd, nd, |i, j| {
                s_hat[(dual_positions[i], dual_positions[j])]
            });
            let s_pd = DMat::from_fn(np, nd, |i, j| {
                s_hat[(primal_positions[i], dual_positions[j])]
            });
            let s_pp = DMat::from_fn(np, np, |i, j| {
                s_hat[(primal_positions[i], primal_positions[j])]
            });
            let dual_chol = if nd > 0 {
                Some(Cholesky::new(s_dd).ok_or_else(|| {
                    Error::Factorization(format!(
                        "dual block of subdomain {s} is not SPD (missing vertex constraints?)"
                    ))
                })?)
            } else {
                None
            };
            let coarse_local = match &dual_chol {
                Some(chol) => {
                    let x = chol.solve(&s_pd.transpose());
                    symmetrize(&(&s_pp - &s_pd * x))
                }
                None => s_pp,
            };
            for i in 0..np {
                for j in 0..np {
                    coarse[(primal_ids[i], primal_ids[j])] += coarse_local[(i, j)];
                }
            }

            subs.push(SubOp {
                sub: s,
                t,
                s_hat,
                coords,
                classes,
                dual_positions,
                dual_wt,
                primal_positions,
                primal_ids,
                dual_chol,
                s_pd,
            });
        }

        let coarse = Cholesky::new(coarse).ok_or_else(|| {
            Error::Factorization("coarse primal problem is not SPD".into())
        })?;

        Ok(PartiallyCoupledOperator {
            space,
            what,
            subs,
            coarse,
        })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn dim_assembled(&self) -> usize {
        self.what.dim
    }

    pub fn num_subdomains(&self) -> usize {
        self.subs.len()
    }

    pub fn local_transform(&self, sub: usize) -> &DMat {
        &self.subs[sub].t
    }

    pub fn local_schur(&self, sub: usize) -> &DMat {
        &self.subs[sub].s_hat
    }

    /// R~_i: gather the local transformed vector of one subdomain from a
    /// partially coupled vector.
    pub fn gather_local(&self, sub: usize, wt: &DVec) -> DVec {
        let so = &self.subs[sub];
        let mut v = DVec::zeros(so.coords.len());
        for (i, &la) in so.dual_positions.iter().enumerate() {
            v[la] = wt[so.dual_wt[i]];
        }
        for (i, &la) in so.primal_positions.iter().enumerate() {
            v[la] = wt[self.space.num_dual + so.primal_ids[i]];
        }
        v
    }

    /// R~_i^T: scatter-add a local vector into a partially coupled vector.
    pub fn scatter_local_add(&self, sub: usize, v: &DVec, out: &mut DVec) {
        let so = &self.subs[sub];
        for (i, &la) in so.dual_positions.iter().enumerate() {
            out[so.dual_wt[i]] += v[la];
        }
        for (i, &la) in so.primal_positions.iter().enumerate() {
            out[self.space.num_dual + so.primal_ids[i]] += v[la];
        }
    }

    /// R_i: gather the local vector of one subdomain from an assembled
    /// (fully coupled) vector.
    pub fn gather_assembled(&self, sub: usize, w: &DVec) -> DVec {
        let so = &self.subs[sub];
        DVec::from_fn(so.coords.len(), |la, _| {
            let (cid, j) = so.coords[la];
            w[self.what.index(cid, j)]
        })
    }

    /// R_i^T: scatter-add a local vector into an assembled vector.
    pub fn scatter_assembled_add(&self, sub: usize, v: &DVec, out: &mut DVec) {
        let so = &self.subs[sub];
        for la in 0..so.coords.len() {
            let (cid, j) = so.coords[la];
            out[self.what.index(cid, j)] += v[la];
        }
    }

    /// R~: inject an assembled vector into the partially coupled space
    /// (duplicating dual coordinates).
    pub fn rtilde(&self, w: &DVec) -> DVec {
        let mut out = DVec::zeros(self.dim());
        for so in &self.subs {
            for (i, &la) in so.dual_positions.iter().enumerate() {
                let (cid, j) = so.coords[la];
                out[so.dual_wt[i]] = w[self.what.index(cid, j)];
            }
            for (i, &la) in so.primal_positions.iter().enumerate() {
                let (cid, j) = so.coords[la];
                out[self.space.num_dual + so.primal_ids[i]] = w[self.what.index(cid, j)];
            }
        }
        out
    }

    /// R~^T: assemble a partially coupled vector (summing dual copies,
    /// passing primal coordinates through once).
    pub fn rtilde_t(&self, wt: &DVec) -> DVec {
        let mut out = DVec::zeros(self.dim_assembled());
        let mut seen = vec![false; self.space.num_primal];
        for so in &self.subs {
            for (i, &la) in so.dual_positions.iter().enumerate() {
                let (cid, j) = so.coords[la];
                out[self.what.index(cid, j)] += wt[so.dual_wt[i]];
            }
            for (i, &la) in so.primal_positions.iter().enumerate() {
                let pid = so.primal_ids[i];
                if !seen[pid] {
                    seen[pid] = true;
                    let (cid, j) = so.coords[la];
                    out[self.what.index(cid, j)] += wt[self.space.num_dual + pid];
                }
            }
        }
        out
    }

    /// Block scaling of one subdomain's local vector: apply the class
    /// scaling matrix (or its transpose) on every class block.
    pub fn scale_local(
        &self,
        scalings: &ScalingSet,
        sub: usize,
        v: &DVec,
        transpose: bool,
    ) -> DVec {
        let so = &self.subs[sub];
        let mut y = DVec::zeros(v.len());
        for (cid, pos, locals) in &so.classes {
            let d = &scalings.blocks[*cid][*pos];
            let sub_v = DVec::from_fn(locals.len(), |a, _| v[locals[a]]);
            let r = if transpose {
                d.transpose() * sub_v
            } else {
                d * sub_v
            };
            for (a, &la) in locals.iter().enumerate() {
                y[la] = r[a];
            }
        }
        y
    }

    /// `S~ w` on the partially coupled space.
    pub fn apply(&self, wt: &DVec) -> DVec {
        let mut out = DVec::zeros(self.dim());
        for so in &self.subs {
            let v = self.gather_local(so.sub, wt);
            let y = &so.s_hat * v;
            self.scatter_local_add(so.sub, &y, &mut out);
        }
        out
    }

    /// `<S~ w, w>`.
    pub fn energy(&self, wt: &DVec) -> f64 {
        self.apply(wt).dot(wt)
    }

    /// Per-subdomain energies `<S-check^(i) w_i, w_i>` of a partially
    /// coupled vector.
    pub fn subdomain_energies(&self, wt: &DVec) -> Vec<f64> {
        self.subs
            .iter()
            .map(|so| {
                let v = self.gather_local(so.sub, wt);
                (&so.s_hat * &v).dot(&v)
            })
            .collect()
    }

    /// Solve `S~ x = b` through the dual/coarse block factorization.
    pub fn solve(&self, b: &DVec) -> DVec {
        let np = self.space.num_primal;
        let nd = self.space.num_dual;
        let mut coarse_rhs = DVec::from_fn(np, |i, _| b[nd + i]);
        let mut ydual: Vec<DVec> = Vec::with_capacity(self.subs.len());
        for so in &self.subs {
            let ndl = so.dual_positions.len();
            let rd = DVec::from_fn(ndl, |i, _| b[so.dual_wt[i]]);
            let y = match &so.dual_chol {
                Some(chol) => chol.solve(&rd),
                None => rd,
            };
            let c = &so.s_pd * &y;
            for (i, &pid) in so.primal_ids.iter().enumerate() {
                coarse_rhs[pid] -= c[i];
            }
            ydual.push(y);
        }
        let xp = self.coarse.solve(&coarse_rhs);
        let mut x = DVec::zeros(self.dim());
        for i in 0..np {
            x[nd + i] = xp[i];
        }
        for (so, y) in self.subs.iter().zip(&ydual) {
            if so.dual_positions.is_empty() {
                continue;
            }
            let xp_local = DVec::from_fn(so.primal_ids.len(), |i, _| xp[so.primal_ids[i]]);
            let corr = so.s_pd.transpose() * xp_local;
            let z = so.dual_chol.as_ref().unwrap().solve(&corr);
            for (i, &wi) in so.dual_wt.iter().enumerate() {
                x[wi] = y[i] - z[i];
            }
        }
        x
    }

    /// `D~ w = sum_i R~_i^T D_i R~_i w`.
    pub fn apply_dtilde(&self, scalings: &ScalingSet, wt: &DVec) -> DVec {
        let mut out = DVec::zeros(self.dim());
        for so in &self.subs {
            let v = self.gather_local(so.sub, wt);
            let y = self.scale_local(scalings, so.sub, &v, false);
            self.scatter_local_add(so.sub, &y, &mut out);
        }
        out
    }

    /// `D~^T w`.
    pub fn apply_dtilde_t(&self, scalings: &ScalingSet, wt: &DVec) -> DVec {
        let mut out = DVec::zeros(self.dim());
        for so in &self.subs {
            let v = self.gather_local(so.sub, wt);
            let y = self.scale_local(scalings, so.sub, &v, true);
            self.scatter_local_add(so.sub, &y, &mut out);
        }
        out
    }

    /// `E_D w = R~ R~^T D~ w`, the averaging operator.
    pub fn apply_ed(&self, scalings: &ScalingSet, wt: &DVec) -> DVec {
        self.rtilde(&self.rtilde_t(&self.apply_dtilde(scalings, wt)))
    }
}

/// The BDDC preconditioner `M^{-1} r = R~^T D~ S~^{-1} D~^T R~ r` on the
/// assembled transformed space.
pub struct BddcPreconditioner<'a> {
    pub op: &'a PartiallyCoupledOperator,
    /// Scaling blocks in transformed coordinates (full class size; the
    /// primal/dual partition is implied by the space layout).
    pub scalings: &'a ScalingSet,
}

impl<'a> BddcPreconditioner<'a> {
    pub fn new(op: &'a PartiallyCoupledOperator, scalings: &'a ScalingSet) -> Self {
        BddcPreconditioner { op, scalings }
    }

    pub fn apply(&self, r: &DVec) -> DVec {
        let op = self.op;
        let mut u = DVec::zeros(op.dim());
        for s in 0..op.num_subdomains() {
            let v = op.gather_assembled(s, r);
            let y = op.scale_local(self.scalings, s, &v, true);
            op.scatter_local_add(s, &y, &mut u);
        }
        let x = op.solve(&u);
        let mut out = DVec::zeros(op.dim_assembled());
        for s in 0..op.num_subdomains() {
            let w = op.gather_local(s, &x);
            let y = op.scale_local(self.scalings, s, &w, false);
            op.scatter_assembled_add(s, &y, &mut out);
        }
        out
    }
}

/// Assembled interface operator `S-hat w = sum_i R_i^T S-check^(i) R_i w`
/// in transformed coordinates.
pub fn interface_apply(op: &PartiallyCoupledOperator, w: &DVec) -> DVec {
    let mut out = DVec::zeros(op.dim_assembled());
    for s in 0..op.num_subdomains() {
        let v = op.gather_assembled(s, w);
        let y = op.local_schur(s) * v;
        op.scatter_assembled_add(s, &y, &mut out);
    }
    out
}

/// Convert an assembled transformed vector to nodal values: `w_C = P_C x_C`
/// per class.
pub fn to_nodal(decomp: &Decomposition, basis: &[ChangeOfBasis], what: &WHat, x: &DVec) -> DVec {
    let mut out = DVec::zeros(what.dim);
    for c in &decomp.classes {
        let n = c.size();
        let xc = DVec::from_fn(n, |j, _| x[what.index(c.id, j)]);
        let wc = &basis[c.id].p * xc;
        for j in 0..n {
            out[what.index(c.id, j)] = wc[j];
        }
    }
    out
}

/// Convert nodal values to transformed coordinates per class (inverse of
/// `to_nodal`).
pub fn from_nodal(
    decomp: &Decomposition,
    basis: &[ChangeOfBasis],
    what: &WHat,
    w: &DVec,
) -> Result<DVec> {
    let mut out = DVec::zeros(what.dim);
    for c in &decomp.classes {
        let n = c.size();
        let wc = DVec::from_fn(n, |j, _| w[what.index(c.id, j)]);
        let xc = basis[c.id]
            .p
            .clone()
            .lu()
            .solve(&wc)
            .ok_or_else(|| Error::Factorization("change of basis not invertible".into()))?;
        for j in 0..n {
            out[what.index(c.id, j)] = xc[j];
        }
    }
    Ok(out)
}

/// Transformed right-hand side `g-check = sum_i R_i^T T_i^T g_i` from the
/// per-subdomain condensed nodal interface loads.
pub fn assemble_rhs(op: &PartiallyCoupledOperator, loads: &[DVec]) -> DVec {
    let mut out = DVec::zeros(op.dim_assembled());
    for s in 0..op.num_subdomains() {
        let g = op.local_transform(s).transpose() * &loads[s];
        op.scatter_assembled_add(s, &g, &mut out);
    }
    out
}
