//! Structured meshing of the unit square/cube: N^dim congruent cubic
//! subdomains, each split into m^dim fine cells, every cell split into the
//! same simplices (2 triangles per square, 6 tetrahedra per cube in the Kuhn
//! pattern) so that subdomain boundaries never cut elements.

use crate::{Error, Result};

/// Structured mesh of the unit domain. `h = 1/(n_sub*m)`, `H = 1/n_sub`.
#[derive(Debug, Clone)]
pub struct StructuredMesh {
    pub dim: usize,
    /// Subdomains per direction (N).
    pub n_sub: usize,
    /// Fine cells per subdomain per direction (m = H/h).
    pub m: usize,
}

/// Build a mesh; rejects configurations with no interface (`n < 2`) or no
/// face-interior dofs (`m < 2`).
pub fn build_mesh(dim: usize, n_sub: usize, m: usize) -> Result<StructuredMesh> {
    if dim != 2 && dim != 3 {
        return Err(Error::InvalidParameter(format!("dim must be 2 or 3, got {dim}")));
    }
    if n_sub < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 subdomains per direction, got {n_sub}"
        )));
    }
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 cells per subdomain direction, got {m}"
        )));
    }
    Ok(StructuredMesh { dim, n_sub, m })
}

impl StructuredMesh {
    pub fn cells_per_dir(&self) -> usize {
        self.n_sub * self.m
    }

    pub fn nodes_per_dir(&self) -> usize {
        self.cells_per_dir() + 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells_per_dir() as f64
    }

    pub fn num_cells(&self) -> usize {
        self.cells_per_dir().pow(self.dim as u32)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_dir().pow(self.dim as u32)
    }

    pub fn num_subdomains(&self) -> usize {
        self.n_sub.pow(self.dim as u32)
    }

    /// Lexicographic node id from grid coordinates (x fastest).
    pub fn node_id(&self, c: [usize; 3]) -> usize {
        let nn = self.nodes_per_dir();
        if self.dim == 2 {
            c[0] + nn * c[1]
        } else {
            c[0] + nn * (c[1] + nn * c[2])
        }
    }

    pub fn node_coord(&self, id: usize) -> [usize; 3] {
        let nn = self.nodes_per_dir();
        if self.dim == 2 {
            [id % nn, id / nn, 0]
        } else {
            [id % nn, (id / nn) % nn, id / (nn * nn)]
        }
    }

    /// Physical position of a node.
    pub fn node_pos(&self, id: usize) -> [f64; 3] {
        let c = self.node_coord(id);
        let h = self.h();
        [c[0] as f64 * h, c[1] as f64 * h, c[2] as f64 * h]
    }

    /// Lexicographic cell id from cell grid coordinates.
    pub fn cell_id(&self, c: [usize; 3]) -> usize {
        let nc = self.cells_per_dir();
        if self.dim == 2 {
            c[0] + nc * c[1]
        } else {
            c[0] + nc * (c[1] + nc * c[2])
        }
    }

    pub fn cell_coord(&self, id: usize) -> [usize; 3] {
        let nc = self.cells_per_dir();
        if self.dim == 2 {
            [id % nc, id / nc, 0]
        } else {
            [id % nc, (id / nc) % nc, id / (nc * nc)]
        }
    }

    /// Subdomain id from subdomain grid coordinates.
    pub fn subdomain_id(&self, s: [usize; 3]) -> usize {
        if self.dim == 2 {
            s[0] + self.n_sub * s[1]
        } else {
            s[0] + self.n_sub * (s[1] + self.n_sub * s[2])
        }
    }

    pub fn subdomain_coord(&self, id: usize) -> [usize; 3] {
        let n = self.n_sub;
        if self.dim == 2 {
            [id % n, id / n, 0]
        } else {
            [id % n, (id / n) % n, id / (n * n)]
        }
    }

    /// Owning subdomain of a cell.
    pub fn cell_subdomain(&self, cell: usize) -> usize {
        let c = self.cell_coord(cell);
        self.subdomain_id([c[0] / self.m, c[1] / self.m, c[2] / self.m])
    }

    /// Cell ids of one subdomain, in lexicographic order.
    pub fn subdomain_cells(&self, s: usize) -> Vec<usize> {
        let sc = self.subdomain_coord(s);
        let m = self.m;
        let mut cells = Vec::with_capacity(m.pow(self.dim as u32));
        if self.dim == 2 {
            for j in 0..m {
                for i in 0..m {
                    cells.push(self.cell_id([sc[0] * m + i, sc[1] * m + j, 0]));
                }
            }
        } else {
            for k in 0..m {
                for j in 0..m {
                    for i in 0..m {
                        cells.push(self.cell_id([sc[0] * m + i, sc[1] * m + j, sc[2] * m + k]));
                    }
                }
            }
        }
        cells
    }

    /// True if the node lies on the Dirichlet boundary of the unit domain.
    pub fn is_boundary_node(&self, id: usize) -> bool {
        let c = self.node_coord(id);
        let last = self.cells_per_dir();
        (0..self.dim).any(|d| c[d] == 0 || c[d] == last)
    }

    /// Sorted ids of the subdomains whose closure contains the node.
    pub fn node_sharers(&self, id: usize) -> Vec<usize> {
        let c = self.node_coord(id);
        let mut ranges = [[0usize, 0usize]; 3];
        for d in 0..self.dim {
            let (lo, hi) = dir_sharers(c[d], self.m, self.n_sub);
            ranges[d] = [lo, hi];
        }
        let mut out = Vec::new();
        if self.dim == 2 {
            for sy in ranges[1][0]..=ranges[1][1] {
                for sx in ranges[0][0]..=ranges[0][1] {
                    out.push(self.subdomain_id([sx, sy, 0]));
                }
            }
        } else {
            for sz in ranges[2][0]..=ranges[2][1] {
                for sy in ranges[1][0]..=ranges[1][1] {
                    for sx in ranges[0][0]..=ranges[0][1] {
                        out.push(self.subdomain_id([sx, sy, sz]));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Node ids of the simplices of one cell. Every cell uses the identical
    /// decomposition, which keeps the triangulation conforming across cell
    /// and subdomain boundaries.
    pub fn cell_simplices(&self, cell: usize) -> Vec<Vec<usize>> {
        let c = self.cell_coord(cell);
        if self.dim == 2 {
            let v = |dx: usize, dy: usize| self.node_id([c[0] + dx, c[1] + dy, 0]);
            vec![
                vec![v(0, 0), v(1, 0), v(1, 1)],
                vec![v(0, 0), v(1, 1), v(0, 1)],
            ]
        } else {
            // Kuhn decomposition: six tetrahedra sharing the main diagonal
            // (0,0,0)-(1,1,1), one per permutation of the axes.
            let v = |d: [usize; 3]| self.node_id([c[0] + d[0], c[1] + d[1], c[2] + d[2]]);
            const PERMS: [[usize; 3]; 6] = [
                [0, 1, 2],
                [0, 2, 1],
                [1, 0, 2],
                [1, 2, 0],
                [2, 0, 1],
                [2, 1, 0],
            ];
            PERMS
                .iter()
                .map(|p| {
                    let mut a = [0usize; 3];
                    let mut b = a;
                    a[p[0]] = 1;
                    b[p[0]] = 1;
                    b[p[1]] = 1;
                    vec![v([0, 0, 0]), v(a), v(b), v([1, 1, 1])]
                })
                .collect()
        }
    }
}

/// Subdomain index range sharing grid line `x` in one direction.
fn dir_sharers(x: usize, m: usize, n: usize) -> (usize, usize) {
    if x == 0 {
        (0, 0)
    } else if x == n * m {
        (n - 1, n - 1)
    } else if x % m == 0 {
        (x / m - 1, x / m)
    } else {
        (x / m, x / m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_channel_geometry() {
        let mesh = build_mesh(2, 3, 14).unwrap();
        assert_eq!(mesh.cells_per_dir(), 42);
        assert_eq!(mesh.num_cells(), 42 * 42);
        assert_eq!(mesh.num_subdomains(), 9);
    }

    #[test]
    fn smallest_admissible_2d() {
        let mesh = build_mesh(2, 2, 2).unwrap();
        assert_eq!(mesh.num_cells(), 16);
        // One interior cross-point.
        let crosses: Vec<usize> = (0..mesh.num_nodes())
            .filter(|&n| !mesh.is_boundary_node(n) && mesh.node_sharers(n).len() == 4)
            .collect();
        assert_eq!(crosses.len(), 1);
        // Each face has m-1 = 1 interior dof.
        let face_dofs: Vec<usize> = (0..mesh.num_nodes())
            .filter(|&n| !mesh.is_boundary_node(n) && mesh.node_sharers(n).len() == 2)
            .collect();
        assert_eq!(face_dofs.len(), 4);
    }

    #[test]
    fn edge_interior_count_3d() {
        let mesh = build_mesh(3, 2, 4).unwrap();
        assert_eq!(mesh.num_subdomains(), 8);
        // Nodes shared by exactly 4 subdomains form the interior of shared
        // edges; each of the 6 edge segments has m-1 = 3 of them.
        let edge_nodes: Vec<usize> = (0..mesh.num_nodes())
            .filter(|&n| !mesh.is_boundary_node(n) && mesh.node_sharers(n).len() == 4)
            .collect();
        assert_eq!(edge_nodes.len(), 6 * 3);
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(build_mesh(2, 1, 4).is_err());
        assert!(build_mesh(2, 3, 1).is_err());
        assert!(build_mesh(4, 3, 3).is_err());
    }

    #[test]
    fn kuhn_split_is_conforming_and_covers_cell() {
        let mesh = build_mesh(3, 2, 2).unwrap();
        for cell in [0usize, 1, 5] {
            let tets = mesh.cell_simplices(cell);
            assert_eq!(tets.len(), 6);
            // The six tets share the main diagonal.
            let c = mesh.cell_coord(cell);
            let d0 = mesh.node_id([c[0], c[1], c[2]]);
            let d1 = mesh.node_id([c[0] + 1, c[1] + 1, c[2] + 1]);
            for t in &tets {
                assert!(t.contains(&d0) && t.contains(&d1));
            }
        }
    }

    #[test]
    fn sharer_sets_match_lattice_position() {
        let mesh = build_mesh(2, 3, 4).unwrap();
        // Subdomain corner node strictly inside the domain.
        let corner = mesh.node_id([4, 8, 0]);
        assert_eq!(mesh.node_sharers(corner).len(), 4);
        // Node on one interface line only.
        let face = mesh.node_id([4, 5, 0]);
        assert_eq!(mesh.node_sharers(face).len(), 2);
        // Interior node.
        let inner = mesh.node_id([2, 2, 0]);
        assert_eq!(mesh.node_sharers(inner).len(), 1);
    }
}
