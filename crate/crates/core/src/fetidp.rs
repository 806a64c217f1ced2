//! FETI-DP with a projector preconditioner: the dual operator
//! `F_DP = B S~^{-1} B^T` over the Lagrange multipliers of the fully
//! redundant jump operator, the Dirichlet-type preconditioner
//! `M_FETI^{-1} = B_D S~ B_D^T`, the adaptive constraint matrix U, the
//! projection `P = U (U^T F_DP U)^{-1} U^T F_DP`, and
//! `M_PP^{-1} = (I - P) M_FETI^{-1} (I - P)^T`.
//!
//! Only the unknowns at subdomain vertices are primal here; the adaptive
//! constraints are enforced through the projection.

use crate::adaptive::EigSelection;
use crate::bddc::PartiallyCoupledOperator;
use crate::decomp::{Decomposition, JumpOperator, WSpace};
use crate::linalg::{pseudo_inverse, sym_eig, symmetrize, DEFAULT_REL_TOL};
use crate::scaling::ScalingSet;
use crate::{DMat, DVec, Error, Result};
use nalgebra::{Cholesky, Dyn};

/// Matrix-free dual system. `op` must be the vertex-primal partially
/// coupled operator (identity change of basis).
pub struct DualSystem<'a> {
    pub op: &'a PartiallyCoupledOperator,
    pub jump: &'a JumpOperator,
}

impl<'a> DualSystem<'a> {
    pub fn new(op: &'a PartiallyCoupledOperator, jump: &'a JumpOperator) -> Result<Self> {
        for (c, &k) in op.space.k.iter().enumerate() {
            if k != 0 && op.space.primal_offset[c] >= op.space.num_primal {
                return Err(Error::Config("invalid space".into()));
            }
        }
        Ok(DualSystem { op, jump })
    }

    pub fn multipliers(&self) -> usize {
        self.jump.num_rows
    }

    fn space(&self) -> &WSpace {
        &self.op.space
    }

    /// `F_DP lambda = B S~^{-1} B^T lambda`.
    pub fn f_apply(&self, lambda: &DVec) -> DVec {
        let bt = self.jump.apply_transpose(self.space(), lambda);
        let x = self.op.solve(&bt);
        self.jump.apply(self.space(), &x)
    }

    /// Right-hand side `d = B S~^{-1} g~`.
    pub fn rhs(&self, gtilde: &DVec) -> DVec {
        self.jump.apply(self.space(), &self.op.solve(gtilde))
    }

    /// Displacement recovery `w~ = S~^{-1} (g~ - B^T lambda)`.
    pub fn recover(&self, gtilde: &DVec, lambda: &DVec) -> DVec {
        let bt = self.jump.apply_transpose(self.space(), lambda);
        self.op.solve(&(gtilde - bt))
    }

    /// Dirichlet-type preconditioner `M_FETI^{-1} mu = B_D S~ B_D^T mu`.
    pub fn m_feti_apply(&self, scalings: &ScalingSet, mu: &DVec) -> DVec {
        let w = self
            .jump
            .apply_scaled_transpose(self.space(), &scalings.blocks, mu);
        let sw = self.op.apply(&w);
        self.jump.apply_scaled(self.space(), &scalings.blocks, &sw)
    }
}

/// Partially assembled load vector `g~ = sum_i R~_i^T g_i` from nodal
/// interface loads (vertex-primal layout).
pub fn assemble_gtilde(op: &PartiallyCoupledOperator, loads: &[DVec]) -> DVec {
    let mut out = DVec::zeros(op.dim());
    for s in 0..op.num_subdomains() {
        op.scatter_local_add(s, &loads[s], &mut out);
    }
    out
}

/// Build the constraint matrix U: for every class with selected eigenvectors
/// `v_n` and every sharer pair with multiplier rows on that class, one
/// column carrying `A_C v_n` at those rows. Columns are normalized to unit
/// length, which leaves Range(U) (and hence P) unchanged but keeps the Gram
/// matrix conditioning independent of the coefficient contrast.
/// `selections[c]` is None for classes without adaptive constraints.
pub fn build_u(
    decomp: &Decomposition,
    jump: &JumpOperator,
    selections: &[Option<&EigSelection>],
) -> DMat {
    let mut cols: Vec<DVec> = Vec::new();
    for c in &decomp.classes {
        let Some(sel) = selections.get(c.id).copied().flatten() else {
            continue;
        };
        if sel.selected.is_empty() {
            continue;
        }
        let constraints: Vec<DVec> = sel
            .selected
            .iter()
            .map(|&i| {
                let raw = &sel.left * &sel.pairs[i].vector;
                let nrm = raw.norm();
                if nrm > 0.0 {
                    raw / nrm
                } else {
                    raw
                }
            })
            .collect();
        for block in jump.blocks.iter().filter(|b| b.class == c.id) {
            for con in &constraints {
                let mut col = DVec::zeros(jump.num_rows);
                for j in 0..block.rows {
                    col[block.offset + j] = con[j];
                }
                cols.push(col);
            }
        }
    }
    let mut u = DMat::zeros(jump.num_rows, cols.len());
    for (j, col) in cols.into_iter().enumerate() {
        u.set_column(j, &col);
    }
    u
}

enum GramFactor {
    Chol(Cholesky<f64, Dyn>),
    Pinv(DMat),
}

/// Projection data `P = U (U^T F_DP U)^{-1} U^T F_DP` with the Gram matrix
/// built column by column through F_DP applies and factored densely. An
/// ill-conditioned Gram matrix is reported, not fatal: the run continues
/// with a pseudo-inverse and the condition number lands in the report.
pub struct Projector {
    pub u: DMat,
    fu: DMat,
    gram: GramFactor,
    pub gram_condition: f64,
}

impl Projector {
    pub fn new<F>(u: DMat, f_apply: F) -> Result<Self>
    where
        F: Fn(&DVec) -> DVec,
    {
        let np = u.ncols();
        let mut fu = DMat::zeros(u.nrows(), np);
        for j in 0..np {
            fu.set_column(j, &f_apply(&u.column(j).clone_owned()));
        }
        let gram = symmetrize(&(u.transpose() * &fu));
        let gram_condition = if np == 0 {
            1.0
        } else {
            let (vals, _) = sym_eig(&gram);
            let lmax = vals[np - 1].abs();
            let lmin = vals.iter().fold(f64::INFINITY, |a, &v| a.min(v.abs()));
            if lmin > 0.0 {
                lmax / lmin
            } else {
                f64::INFINITY
            }
        };
        let factor = match Cholesky::new(gram.clone()) {
            Some(c) => GramFactor::Chol(c),
            None => {
                eprintln!(
                    "warning: projector Gram matrix not SPD (condition {gram_condition:.3e}); \
                     falling back to a pseudo-inverse (column pruning in the span sense)"
                );
                GramFactor::Pinv(pseudo_inverse(&gram, DEFAULT_REL_TOL)?)
            }
        };
        Ok(Projector {
            u,
            fu,
            gram: factor,
            gram_condition,
        })
    }

    pub fn num_constraints(&self) -> usize {
        self.u.ncols()
    }

    fn gram_solve(&self, b: &DVec) -> DVec {
        match &self.gram {
            GramFactor::Chol(c) => c.solve(b),
            GramFactor::Pinv(p) => p * b,
        }
    }

    /// `P lambda = U (U^T F U)^{-1} (F U)^T lambda`.
    pub fn apply(&self, lambda: &DVec) -> DVec {
        if self.u.ncols() == 0 {
            return DVec::zeros(lambda.len());
        }
        let rhs = self.fu.transpose() * lambda;
        &self.u * self.gram_solve(&rhs)
    }

    /// `(I - P)^T lambda = lambda - F U (U^T F U)^{-1} U^T lambda`.
    pub fn apply_i_minus_pt(&self, lambda: &DVec) -> DVec {
        if self.u.ncols() == 0 {
            return lambda.clone();
        }
        let rhs = self.u.transpose() * lambda;
        lambda - &self.fu * self.gram_solve(&rhs)
    }

    /// `(I - P) lambda`.
    pub fn apply_i_minus_p(&self, lambda: &DVec) -> DVec {
        lambda - self.apply(lambda)
    }

    /// Initial multiplier `U (U^T F U)^{-1} U^T d`, which makes the starting
    /// residual U-orthogonal.
    pub fn initial_guess(&self, d: &DVec) -> DVec {
        if self.u.ncols() == 0 {
            return DVec::zeros(d.len());
        }
        let rhs = self.u.transpose() * d;
        &self.u * self.gram_solve(&rhs)
    }
}

/// `M_PP^{-1} r = (I - P) M_FETI^{-1} (I - P)^T r`; the outer projections
/// onto Range(B) are omitted because B and B^T inside F_DP absorb them.
pub fn mpp_apply<M>(projector: &Projector, m_feti: M, r: &DVec) -> DVec
where
    M: Fn(&DVec) -> DVec,
{
    let pr = projector.apply_i_minus_pt(r);
    let z = m_feti(&pr);
    projector.apply_i_minus_p(&z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive::ChangeOfBasis;
    use crate::coeff::{generate_coefficient, Pattern};
    use crate::decomp::{build_jump_operator, classify_interface, ClassKind};
    use crate::fem::assemble_subdomain;
    use crate::mesh::build_mesh;
    use crate::scaling::{build_scalings, ScalingKind};
    use crate::schur::schur_interface;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        decomp: crate::decomp::Decomposition,
        op: PartiallyCoupledOperator,
        jump: JumpOperator,
        principal: Vec<Vec<DMat>>,
    }

    fn vertex_primal_setup(dim: usize, n: usize, m: usize, seed: u64) -> Setup {
        let mesh = build_mesh(dim, n, m).unwrap();
        let coeff = generate_coefficient(
            &mesh,
            Pattern::Random {
                exp_lo: -1.5,
                exp_hi: 1.5,
            },
            seed,
        )
        .unwrap();
        let decomp = classify_interface(&mesh).unwrap();
        let schur: Vec<_> = (0..mesh.num_subdomains())
            .map(|s| schur_interface(&assemble_subdomain(&mesh, s, &coeff).unwrap()))
            .collect();
        let principal: Vec<Vec<DMat>> = decomp
            .classes
            .iter()
            .map(|c| {
                (0..c.sharers.len())
                    .map(|pos| crate::schur::class_block(&schur[c.sharers[pos]], &decomp, c.id, pos))
                    .collect()
            })
            .collect();
        let basis: Vec<ChangeOfBasis> = decomp
            .classes
            .iter()
            .map(|c| {
                if c.kind == ClassKind::Vertex {
                    ChangeOfBasis {
                        p: DMat::identity(1, 1),
                        k: 1,
                    }
                } else {
                    ChangeOfBasis::identity(c.size())
                }
            })
            .collect();
        let space = WSpace::vertex_primal(&decomp);
        let op = PartiallyCoupledOperator::new(&decomp, space, &basis, &schur).unwrap();
        let jump = build_jump_operator(&decomp);
        Setup {
            decomp,
            op,
            jump,
            principal,
        }
    }

    #[test]
    fn f_dp_is_psd_and_kills_redundancy_null() {
        let s = vertex_primal_setup(3, 2, 2, 3);
        let dual = DualSystem::new(&s.op, &s.jump).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let lam = DVec::from_fn(dual.multipliers(), |_, _| rng.gen_range(-1.0..1.0));
            let f = dual.f_apply(&lam);
            assert!(f.dot(&lam) >= -1e-10 * lam.norm_squared());
        }
        // Cycle combination on a redundant edge: rows (a,b) + (b,c) - (a,c)
        // lie in the null space of B^T.
        let edge = s
            .decomp
            .classes
            .iter()
            .find(|c| c.kind == ClassKind::Edge)
            .unwrap();
        let blocks: Vec<_> = s.jump.blocks.iter().filter(|b| b.class == edge.id).collect();
        let (a, b, c) = (edge.sharers[0], edge.sharers[1], edge.sharers[2]);
        let mut mu = DVec::zeros(dual.multipliers());
        for blk in &blocks {
            if blk.pair == (a, b) || blk.pair == (b, c) {
                mu[blk.offset] = 1.0;
            }
            if blk.pair == (a, c) {
                mu[blk.offset] = -1.0;
            }
        }
        let f = dual.f_apply(&mu);
        assert!(f.dot(&mu).abs() < 1e-12, "redundancy null vector has energy");
    }

    #[test]
    fn ed_plus_pd_is_identity_vertex_primal() {
        for kind in [ScalingKind::Multiplicity, ScalingKind::Deluxe] {
            let s = vertex_primal_setup(2, 3, 4, 7);
            let scal = build_scalings(&s.decomp, kind, Some(&s.principal)).unwrap();
            assert!(scal.partition_defect() < 1e-12);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..20 {
                let w = DVec::from_fn(s.op.dim(), |_, _| rng.gen_range(-1.0..1.0));
                let ed = s.op.apply_ed(&scal, &w);
                let pd = s
                    .jump
                    .apply_scaled_transpose(&s.op.space, &scal.blocks, &s.jump.apply(&s.op.space, &w));
                assert!(
                    (&ed + &pd - &w).amax() < 1e-12 * w.amax().max(1.0),
                    "E_D + P_D != I for {kind:?}"
                );
                // P_D preserves the jump: B P_D w = B w.
                let bpd = s.jump.apply(&s.op.space, &pd);
                let bw = s.jump.apply(&s.op.space, &w);
                assert!((&bpd - &bw).amax() < 1e-12 * bw.amax().max(1.0));
            }
        }
    }

    #[test]
    fn ed_plus_pd_in_3d_with_redundant_edges() {
        let s = vertex_primal_setup(3, 2, 2, 5);
        let scal = build_scalings(&s.decomp, ScalingKind::Deluxe, Some(&s.principal)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let w = DVec::from_fn(s.op.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let ed = s.op.apply_ed(&scal, &w);
            let pd = s
                .jump
                .apply_scaled_transpose(&s.op.space, &scal.blocks, &s.jump.apply(&s.op.space, &w));
            assert!((&ed + &pd - &w).amax() < 1e-12 * w.amax().max(1.0));
        }
    }

    #[test]
    fn projector_idempotent_and_orthogonality() {
        let s = vertex_primal_setup(2, 2, 3, 9);
        let dual = DualSystem::new(&s.op, &s.jump).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // A couple of arbitrary independent constraint columns.
        let u = DMat::from_fn(dual.multipliers(), 3, |_, _| rng.gen_range(-1.0..1.0));
        let proj = Projector::new(u, |v| dual.f_apply(v)).unwrap();
        for _ in 0..10 {
            let x = DVec::from_fn(dual.multipliers(), |_, _| rng.gen_range(-1.0..1.0));
            let px = proj.apply(&x);
            let ppx = proj.apply(&px);
            assert!((&ppx - &px).amax() < 1e-8 * px.amax().max(1.0), "P^2 != P");
            // propU1: U^T F (I - P) x = 0.
            let ip = proj.apply_i_minus_p(&x);
            let fip = dual.f_apply(&ip);
            let viol = proj.u.transpose() * fip;
            assert!(viol.amax() < 1e-8 * x.norm(), "propU1 violated: {}", viol.amax());
            // propU2: U^T (I - P^T) x = ... Range(I-P^T) is orthogonal to
            // Range(U).
            let ipt = proj.apply_i_minus_pt(&x);
            let viol2 = proj.u.transpose() * ipt;
            assert!(viol2.amax() < 1e-8 * x.norm() * proj.gram_condition.min(1e3));
        }
    }

    #[test]
    fn single_column_projector() {
        let s = vertex_primal_setup(2, 2, 2, 1);
        let dual = DualSystem::new(&s.op, &s.jump).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ucol = DVec::from_fn(dual.multipliers(), |_, _| rng.gen_range(-1.0..1.0));
        let mut u = DMat::zeros(dual.multipliers(), 1);
        u.set_column(0, &ucol);
        let proj = Projector::new(u, |v| dual.f_apply(v)).unwrap();
        let x = DVec::from_fn(dual.multipliers(), |_, _| rng.gen_range(-1.0..1.0));
        // P = u (u' F u)^{-1} u' F.
        let fu = dual.f_apply(&ucol);
        let expect = &ucol * (fu.dot(&x) / fu.dot(&ucol));
        assert!((proj.apply(&x) - expect).amax() < 1e-10 * x.amax().max(1.0));
    }

    #[test]
    fn empty_u_reduces_mpp_to_m_feti() {
        let s = vertex_primal_setup(2, 2, 2, 2);
        let dual = DualSystem::new(&s.op, &s.jump).unwrap();
        let scal = build_scalings(&s.decomp, ScalingKind::Multiplicity, None).unwrap();
        let u = DMat::zeros(dual.multipliers(), 0);
        let proj = Projector::new(u, |v| dual.f_apply(v)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = DVec::from_fn(dual.multipliers(), |_, _| rng.gen_range(-1.0..1.0));
        let a = mpp_apply(&proj, |v| dual.m_feti_apply(&scal, v), &r);
        let b = dual.m_feti_apply(&scal, &r);
        assert!((a - b).amax() < 1e-14);
    }

    #[test]
    fn u_column_count_follows_pair_rule() {
        // An edge shared by 4 subdomains with 2 selected vectors yields
        // 2 * 6 columns; a face with 1 selected vector yields 1.
        let s = vertex_primal_setup(3, 2, 2, 6);
        let edge = s
            .decomp
            .classes
            .iter()
            .find(|c| c.kind == ClassKind::Edge)
            .unwrap();
        let face = s
            .decomp
            .classes
            .iter()
            .find(|c| c.kind == ClassKind::Face)
            .unwrap();
        // Synthetic selections: identity left form, unit vectors selected.
        let mk = |cid: usize, n: usize, k: usize| crate::adaptive::EigSelection {
            class_id: cid,
            left: DMat::identity(n, n),
            pairs: (0..n)
                .map(|i| crate::linalg::EigPair {
                    value: 10.0,
                    vector: {
                        let mut v = DVec::zeros(n);
                        v[i] = 1.0;
                        v
                    },
                })
                .collect(),
            joint_null: vec![],
            tol: 1.0,
            selected: (0..k).collect(),
        };
        // Edge classes in this mesh have a single dof; fabricate a 1-dof
        // selection there and check multiplicities through build_u.
        let edge_sel = mk(edge.id, edge.size(), 1.min(edge.size()));
        let face_sel = mk(face.id, face.size(), 1);
        let mut selections: Vec<Option<&EigSelection>> =
            vec![None; s.decomp.classes.len()];
        selections[edge.id] = Some(&edge_sel);
        selections[face.id] = Some(&face_sel);
        let u = build_u(&s.decomp, &s.jump, &selections);
        assert_eq!(u.ncols(), 6 * 1 + 1);
    }
}
