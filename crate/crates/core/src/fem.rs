//! Conforming linear FEM assembly per subdomain with element-wise
//! coefficients. Homogeneous Dirichlet dofs on the outer boundary are
//! removed from every index set before decomposition.

use crate::coeff::CoefficientField;
use crate::mesh::StructuredMesh;
use crate::{DMat, DVec, Error, Result};
use nalgebra::{Cholesky, Dyn};

/// Stiffness matrix of one linear simplex: `K_ab = rho * |T| * grad(a).grad(b)`.
/// `vertices` holds d+1 points for a d-simplex (3 in 2D, 4 in 3D).
pub fn element_stiffness(vertices: &[[f64; 3]], rho: f64) -> Result<DMat> {
    if rho <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "element coefficient must be positive, got {rho}"
        )));
    }
    let d = vertices.len() - 1;
    if d != 2 && d != 3 {
        return Err(Error::InvalidParameter(format!(
            "simplex must have 3 or 4 vertices, got {}",
            vertices.len()
        )));
    }
    // Edge matrix columns x_k - x_0; volume = |det|/d!.
    let e = DMat::from_fn(d, d, |i, k| vertices[k + 1][i] - vertices[0][i]);
    let det = e.clone().determinant();
    let factorial = if d == 2 { 2.0 } else { 6.0 };
    let vol = det.abs() / factorial;
    if vol < 1e-300 {
        return Err(Error::DegenerateElement(vol));
    }
    let einv = e
        .try_inverse()
        .ok_or(Error::DegenerateElement(vol))?;
    // Row k of E^{-1} is the gradient of basis function k+1; basis 0 closes
    // the partition of unity.
    let mut grads = DMat::zeros(d + 1, d);
    for k in 0..d {
        for i in 0..d {
            grads[(k + 1, i)] = einv[(k, i)];
            grads[(0, i)] -= einv[(k, i)];
        }
    }
    Ok(&grads * grads.transpose() * (rho * vol))
}

/// Subdomain stiffness split into interior/interface blocks with the
/// interior factorization retained for Schur assembly and load condensation.
pub struct LocalSystem {
    pub subdomain: usize,
    /// Global node ids of local interior dofs (sorted).
    pub interior_nodes: Vec<usize>,
    /// Global node ids of local interface dofs (sorted).
    pub interface_nodes: Vec<usize>,
    pub a_ii: DMat,
    /// Coupling block, interface rows by interior columns.
    pub a_gi: DMat,
    pub a_gg: DMat,
    chol_ii: Option<Cholesky<f64, Dyn>>,
    /// Load vector for f = 1 on interior dofs.
    pub load_interior: DVec,
    /// Load vector for f = 1 on interface dofs.
    pub load_interface: DVec,
}

enum DofSlot {
    Interior(usize),
    Interface(usize),
    Dirichlet,
}

/// Assemble one subdomain; elements are visited in lexicographic cell order.
pub fn assemble_subdomain(
    mesh: &StructuredMesh,
    subdomain: usize,
    coeff: &CoefficientField,
) -> Result<LocalSystem> {
    let cells = mesh.subdomain_cells(subdomain);
    assemble_subdomain_ordered(mesh, subdomain, coeff, &cells, false)
}

/// Pure-Neumann variant: outer-boundary dofs stay in the system as free
/// interior unknowns. The interface dof set is unchanged. Used for the
/// local eigenproblem blocks, where the subdomain must not see the global
/// Dirichlet condition.
pub fn assemble_subdomain_neumann(
    mesh: &StructuredMesh,
    subdomain: usize,
    coeff: &CoefficientField,
) -> Result<LocalSystem> {
    let cells = mesh.subdomain_cells(subdomain);
    assemble_subdomain_ordered(mesh, subdomain, coeff, &cells, true)
}

fn assemble_subdomain_ordered(
    mesh: &StructuredMesh,
    subdomain: usize,
    coeff: &CoefficientField,
    cells: &[usize],
    neumann: bool,
) -> Result<LocalSystem> {
    if subdomain >= mesh.num_subdomains() {
        return Err(Error::InvalidParameter(format!(
            "subdomain {subdomain} out of range"
        )));
    }
    // Collect the subdomain's nodes from its own cell list.
    let mut nodes: Vec<usize> = Vec::new();
    for &cell in cells {
        for simplex in mesh.cell_simplices(cell) {
            nodes.extend(simplex);
        }
    }
    nodes.sort_unstable();
    nodes.dedup();

    let mut interior_nodes = Vec::new();
    let mut interface_nodes = Vec::new();
    for &n in &nodes {
        if mesh.is_boundary_node(n) {
            if neumann {
                interior_nodes.push(n);
            }
            continue;
        }
        if mesh.node_sharers(n).len() > 1 {
            interface_nodes.push(n);
        } else {
            interior_nodes.push(n);
        }
    }
    interior_nodes.sort_unstable();

    let slot = |n: usize| -> DofSlot {
        if mesh.is_boundary_node(n) && !neumann {
            return DofSlot::Dirichlet;
        }
        if let Ok(k) = interface_nodes.binary_search(&n) {
            DofSlot::Interface(k)
        } else {
            DofSlot::Interior(interior_nodes.binary_search(&n).unwrap())
        }
    };

    let ni = interior_nodes.len();
    let ng = interface_nodes.len();
    let mut a_ii = DMat::zeros(ni, ni);
    let mut a_gi = DMat::zeros(ng, ni);
    let mut a_gg = DMat::zeros(ng, ng);
    let mut load_interior = DVec::zeros(ni);
    let mut load_interface = DVec::zeros(ng);
    let d = mesh.dim;
    let nodal_load = |vol: f64| vol / (d + 1) as f64;

    for &cell in cells {
        let rho = coeff.value(cell);
        for simplex in mesh.cell_simplices(cell) {
            let verts: Vec<[f64; 3]> = simplex.iter().map(|&n| mesh.node_pos(n)).collect();
            let ke = element_stiffness(&verts, rho)?;
            let vol = simplex_volume(&verts, d);
            for (a, &na) in simplex.iter().enumerate() {
                let sa = slot(na);
                match sa {
                    DofSlot::Interior(i) => load_interior[i] += nodal_load(vol),
                    DofSlot::Interface(g) => load_interface[g] += nodal_load(vol),
                    DofSlot::Dirichlet => {}
                }
                for (b, &nb) in simplex.iter().enumerate() {
                    match (&sa, slot(nb)) {
                        (DofSlot::Interior(i), DofSlot::Interior(j)) => {
                            a_ii[(*i, j)] += ke[(a, b)]
                        }
                        (DofSlot::Interface(g), DofSlot::Interior(j)) => {
                            a_gi[(*g, j)] += ke[(a, b)]
                        }
                        (DofSlot::Interface(g), DofSlot::Interface(h)) => {
                            a_gg[(*g, h)] += ke[(a, b)]
                        }
                        _ => {}
                    }
                }
            }
        }
    }

    let chol_ii = if ni > 0 {
        Some(
            Cholesky::new(a_ii.clone())
                .ok_or(Error::SingularInterior(subdomain))?,
        )
    } else {
        None
    };

    Ok(LocalSystem {
        subdomain,
        interior_nodes,
        interface_nodes,
        a_ii,
        a_gi,
        a_gg,
        chol_ii,
        load_interior,
        load_interface,
    })
}

fn simplex_volume(vertices: &[[f64; 3]], d: usize) -> f64 {
    let e = DMat::from_fn(d, d, |i, k| vertices[k + 1][i] - vertices[0][i]);
    let factorial = if d == 2 { 2.0 } else { 6.0 };
    e.determinant().abs() / factorial
}

impl LocalSystem {
    pub fn num_interface(&self) -> usize {
        self.interface_nodes.len()
    }

    pub fn num_interior(&self) -> usize {
        self.interior_nodes.len()
    }

    /// Solve the interior block.
    pub fn solve_interior(&self, rhs: &DVec) -> DVec {
        match &self.chol_ii {
            Some(c) => c.solve(rhs),
            None => DVec::zeros(0),
        }
    }

    /// Solve the interior block for a block of right-hand sides.
    pub fn solve_interior_mat(&self, rhs: &DMat) -> DMat {
        match &self.chol_ii {
            Some(c) => c.solve(rhs),
            None => DMat::zeros(0, rhs.ncols()),
        }
    }

    /// Condensed interface load `g = f_G - A_GI A_II^{-1} f_I`.
    pub fn condensed_load(&self) -> DVec {
        if self.num_interior() == 0 {
            return self.load_interface.clone();
        }
        &self.load_interface - &self.a_gi * self.solve_interior(&self.load_interior)
    }

    /// Interior values completing an interface trace with the given interior
    /// load: `u_I = A_II^{-1}(f_I - A_IG u_G)`.
    pub fn recover_interior(&self, u_interface: &DVec) -> DVec {
        if self.num_interior() == 0 {
            return DVec::zeros(0);
        }
        self.solve_interior(&(&self.load_interior - self.a_gi.transpose() * u_interface))
    }

    /// Energy `u^T A u` for a full local vector split by blocks.
    pub fn energy(&self, u_interior: &DVec, u_interface: &DVec) -> f64 {
        let mut e = (u_interface.transpose() * &self.a_gg * u_interface)[(0, 0)];
        if self.num_interior() > 0 {
            e += (u_interior.transpose() * &self.a_ii * u_interior)[(0, 0)];
            e += 2.0 * (u_interface.transpose() * &self.a_gi * u_interior)[(0, 0)];
        }
        e
    }
}

/// Dense monodomain assembly over all non-Dirichlet nodes; returns the
/// matrix, the f = 1 load vector, and the sorted free node ids. Intended as
/// a direct-solve oracle for tests, hence the hard size cap.
pub fn assemble_global(mesh: &StructuredMesh, coeff: &CoefficientField) -> Result<(DMat, DVec, Vec<usize>)> {
    let free: Vec<usize> = (0..mesh.num_nodes())
        .filter(|&n| !mesh.is_boundary_node(n))
        .collect();
    if free.len() > 5000 {
        return Err(Error::InvalidParameter(format!(
            "global dense assembly capped at 5000 dofs, got {}",
            free.len()
        )));
    }
    let idx = |n: usize| free.binary_search(&n).ok();
    let nf = free.len();
    let mut a = DMat::zeros(nf, nf);
    let mut f = DVec::zeros(nf);
    let d = mesh.dim;
    for cell in 0..mesh.num_cells() {
        let rho = coeff.value(cell);
        for simplex in mesh.cell_simplices(cell) {
            let verts: Vec<[f64; 3]> = simplex.iter().map(|&n| mesh.node_pos(n)).collect();
            let ke = element_stiffness(&verts, rho)?;
            let vol = simplex_volume(&verts, d);
            for (p, &np) in simplex.iter().enumerate() {
                let Some(i) = idx(np) else { continue };
                f[i] += vol / (d + 1) as f64;
                for (q, &nq) in simplex.iter().enumerate() {
                    if let Some(j) = idx(nq) {
                        a[(i, j)] += ke[(p, q)];
                    }
                }
            }
        }
    }
    Ok((a, f, free))
}
