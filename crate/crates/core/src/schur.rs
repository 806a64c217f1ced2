//! Interface Schur complements S^(i), principal class blocks S_C^(i),
//! class-interior Schur complements, and the slab (economic) variants.

use crate::coeff::CoefficientField;
use crate::decomp::Decomposition;
use crate::fem::{element_stiffness, LocalSystem};
use crate::linalg::{submatrix, symmetrize};
use crate::mesh::StructuredMesh;
use crate::{DMat, Error, Result};
use nalgebra::Cholesky;

/// Dense interface Schur complement of one subdomain, rows/cols in the
/// subdomain's sorted interface ordering.
#[derive(Debug, Clone)]
pub struct SchurOperator {
    pub subdomain: usize,
    pub matrix: DMat,
}

/// Slab thickness for the economic class problems: `Cells(k)` condenses the
/// stiffness of the k cell layers on each side of the class, with zero
/// Dirichlet data on the artificial cut; `Full` uses the whole subdomain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eta {
    Full,
    Cells(usize),
}

/// Principal and condensed blocks of one class seen from one sharer.
#[derive(Debug, Clone)]
pub struct ClassBlocks {
    /// Rows/cols of the class-interior dofs of S^(l).
    pub principal: DMat,
    /// Schur complement of S^(l) onto the class-interior dofs.
    pub condensed: DMat,
}

/// Dense Schur complement `M_kk - M_ke M_ee^{-1} M_ek`; the eliminated block
/// must be positive definite.
pub fn schur_complement(m: &DMat, keep: &[usize], elim: &[usize]) -> Result<DMat> {
    let kk = submatrix(m, keep, keep);
    if elim.is_empty() {
        return Ok(kk);
    }
    let ee = submatrix(m, elim, elim);
    let ek = submatrix(m, elim, keep);
    let chol = Cholesky::new(ee).ok_or_else(|| {
        Error::Factorization("eliminated block is not positive definite".into())
    })?;
    let x = chol.solve(&ek);
    Ok(symmetrize(&(kk - ek.transpose() * x)))
}

/// Congruence with the mean-free projector `I - (1/n) 1 1^T`.
fn project_out_constant(m: &DMat) -> DMat {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let row_mean = DMat::from_fn(n, 1, |i, _| {
        (0..n).map(|j| m[(i, j)]).sum::<f64>() / n as f64
    });
    let total: f64 = (0..n).map(|i| row_mean[(i, 0)]).sum::<f64>() / n as f64;
    let mut out = m.clone();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] += total - row_mean[(i, 0)] - row_mean[(j, 0)];
        }
    }
    symmetrize(&out)
}

/// Interface Schur complement `S = A_GG - A_GI A_II^{-1} A_IG`.
pub fn schur_interface(ls: &LocalSystem) -> SchurOperator {
    let s = if ls.num_interior() == 0 {
        ls.a_gg.clone()
    } else {
        let x = ls.solve_interior_mat(&ls.a_gi.transpose());
        symmetrize(&(&ls.a_gg - &ls.a_gi * x))
    };
    SchurOperator {
        subdomain: ls.subdomain,
        matrix: s,
    }
}

/// Principal block of S^(l) on the class-interior dofs.
pub fn class_block(
    s: &SchurOperator,
    decomp: &Decomposition,
    class_id: usize,
    sharer_pos: usize,
) -> DMat {
    let locals = &decomp.class_local[class_id][sharer_pos];
    submatrix(&s.matrix, locals, locals)
}

/// Condensed block of S^(l): Schur complement onto the class-interior dofs
/// after eliminating every other interface dof of the subdomain.
pub fn class_schur_full(
    s: &SchurOperator,
    decomp: &Decomposition,
    class_id: usize,
    sharer_pos: usize,
) -> Result<DMat> {
    let keep = &decomp.class_local[class_id][sharer_pos];
    let elim: Vec<usize> = (0..s.matrix.nrows())
        .filter(|i| !keep.contains(i))
        .collect();
    schur_complement(&s.matrix, keep, &elim)
}

/// Both class blocks for the requested slab thickness. `Eta::Full` extracts
/// them from the dense interface Schur complement; `Eta::Cells(k)` assembles
/// the sub-stiffness of the cells within k layers of the class and condenses
/// that instead (with zero Dirichlet data on the artificial cut). With
/// `neumann` the outer domain boundary inside the slab is left free, which
/// must match the boundary treatment of the Schur operator passed in.
pub fn class_blocks(
    mesh: &StructuredMesh,
    coeff: &CoefficientField,
    s: &SchurOperator,
    decomp: &Decomposition,
    class_id: usize,
    sharer_pos: usize,
    eta: Eta,
    neumann: bool,
) -> Result<ClassBlocks> {
    match eta {
        Eta::Full => {
            let mut condensed = class_schur_full(s, decomp, class_id, sharer_pos)?;
            if neumann {
                // A pure-Neumann condensation annihilates constants exactly;
                // projecting onto the mean-free complement removes only the
                // elimination roundoff in that direction, which otherwise
                // pollutes the infinite-eigenvalue classification at high
                // contrast.
                condensed = project_out_constant(&condensed);
            }
            Ok(ClassBlocks {
                principal: class_block(s, decomp, class_id, sharer_pos),
                condensed,
            })
        }
        Eta::Cells(k) => {
            if k == 0 || k > mesh.m {
                return Err(Error::InvalidParameter(format!(
                    "slab thickness must be in 1..=m cells, got {k}"
                )));
            }
            if k == mesh.m {
                // A subdomain-wide slab has no cut and reproduces the full
                // version exactly; skip the extra assembly.
                return class_blocks(
                    mesh, coeff, s, decomp, class_id, sharer_pos, Eta::Full, neumann,
                );
            }
            slab_blocks(mesh, coeff, decomp, class_id, sharer_pos, k, neumann)
        }
    }
}

#[derive(PartialEq, Clone, Copy)]
enum SlabRole {
    Keep,
    OtherInterface,
    Interior,
}

fn slab_blocks(
    mesh: &StructuredMesh,
    coeff: &CoefficientField,
    decomp: &Decomposition,
    class_id: usize,
    sharer_pos: usize,
    k: usize,
    neumann: bool,
) -> Result<ClassBlocks> {
    let class = &decomp.classes[class_id];
    let sub = class.sharers[sharer_pos];
    let sc = mesh.subdomain_coord(sub);

    // Axes in which the class is flat, and the fine-grid plane positions.
    let c0 = mesh.node_coord(class.nodes[0]);
    let mut fixed: Vec<(usize, usize)> = Vec::new();
    for d in 0..mesh.dim {
        if class
            .nodes
            .iter()
            .all(|&n| mesh.node_coord(n)[d] == c0[d])
        {
            fixed.push((d, c0[d]));
        }
    }

    // Slab cells: layer distance below k in every fixed axis.
    let layer_dist = |cell_c: usize, plane: usize| -> usize {
        if cell_c >= plane {
            cell_c - plane
        } else {
            plane - 1 - cell_c
        }
    };
    let cells: Vec<usize> = mesh
        .subdomain_cells(sub)
        .into_iter()
        .filter(|&cell| {
            let cc = mesh.cell_coord(cell);
            fixed.iter().all(|&(d, p)| layer_dist(cc[d], p) < k)
        })
        .collect();

    // Collect slab nodes and classify them.
    let mut nodes: Vec<usize> = cells
        .iter()
        .flat_map(|&cell| mesh.cell_simplices(cell).into_iter().flatten())
        .collect();
    nodes.sort_unstable();
    nodes.dedup();

    // The artificial cut of the slab is left free (natural condition): the
    // eigenproblem sees the stiffness restricted to the slab and nothing
    // else, so a floating condensation keeps its constant null vector.
    let lo = [sc[0] * mesh.m, sc[1] * mesh.m, sc[2] * mesh.m];
    let roles: Vec<(usize, SlabRole)> = nodes
        .iter()
        .filter(|&&n| neumann || !mesh.is_boundary_node(n))
        .map(|&n| {
            let c = mesh.node_coord(n);
            let on_sub_boundary = (0..mesh.dim)
                .any(|d| c[d] == lo[d] || c[d] == lo[d] + mesh.m);
            let role = if class.nodes.binary_search(&n).is_ok() {
                SlabRole::Keep
            } else if mesh.is_boundary_node(n) {
                // Reached only in the Neumann variant: outer-boundary dofs
                // stay free like subdomain-interior ones.
                SlabRole::Interior
            } else if on_sub_boundary {
                SlabRole::OtherInterface
            } else {
                SlabRole::Interior
            };
            (n, role)
        })
        .collect();

    let free: Vec<usize> = roles.iter().map(|(n, _)| *n).collect();
    let role_of = |n: usize| -> SlabRole {
        roles[roles.binary_search_by_key(&n, |(m, _)| *m).unwrap()].1
    };

    // Assemble the slab stiffness over the free dofs.
    let nf = free.len();
    let mut a = DMat::zeros(nf, nf);
    for &cell in &cells {
        let rho = coeff.value(cell);
        for simplex in mesh.cell_simplices(cell) {
            let verts: Vec<[f64; 3]> = simplex.iter().map(|&n| mesh.node_pos(n)).collect();
            let ke = element_stiffness(&verts, rho)?;
            for (p, &np) in simplex.iter().enumerate() {
                let Ok(i) = free.binary_search(&np) else { continue };
                for (q, &nq) in simplex.iter().enumerate() {
                    if let Ok(j) = free.binary_search(&nq) {
                        a[(i, j)] += ke[(p, q)];
                    }
                }
            }
        }
    }

    let keep: Vec<usize> = (0..nf)
        .filter(|&i| role_of(free[i]) == SlabRole::Keep)
        .collect();
    let interior: Vec<usize> = (0..nf)
        .filter(|&i| role_of(free[i]) == SlabRole::Interior)
        .collect();
    let other: Vec<usize> = (0..nf)
        .filter(|&i| role_of(free[i]) == SlabRole::OtherInterface)
        .collect();

    // Principal: other interface dofs pinned to zero, slab interior
    // eliminated. Condensed: both eliminated.
    let keep_and_interior: Vec<usize> = keep.iter().chain(&interior).copied().collect();
    let sub_a = submatrix(&a, &keep_and_interior, &keep_and_interior);
    let sub_keep: Vec<usize> = (0..keep.len()).collect();
    let sub_elim: Vec<usize> = (keep.len()..keep_and_interior.len()).collect();
    let principal = schur_complement(&sub_a, &sub_keep, &sub_elim)?;

    let elim_all: Vec<usize> = interior.iter().chain(&other).copied().collect();
    let mut condensed = schur_complement(&a, &keep, &elim_all)?;
    let floating = neumann || roles.iter().all(|(n, _)| !mesh.is_boundary_node(*n));
    if floating {
        condensed = project_out_constant(&condensed);
    }

    Ok(ClassBlocks {
        principal,
        condensed,
    })
}
