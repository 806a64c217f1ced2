//! Per-cell coefficient fields with deterministic pattern generators.
//!
//! One scalar per square/cube cell, inherited by its sub-simplices. All
//! generators are pure functions of (pattern, params, seed), so a repeated
//! call yields a bit-identical field.

use crate::mesh::StructuredMesh;
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Coefficient pattern descriptor.
///
/// Channel geometry: the subdomain height splits into `2*count + 1` equal
/// alternating bands (gap, channel, gap, ...); channel bands take the value
/// `p` on background 1 and are replicated identically in every subdomain,
/// which makes the field mirror-symmetric across subdomain interfaces. In
/// 3D a channel is a square-cross-section rod along each coordinate axis at
/// the same band positions, so every face of a subdomain is crossed.
///
/// Fracture geometry: a seeded staircase random walk of one-cell segments
/// from the low corner to the high corner of the domain, value `p` on
/// background 1.
#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    Constant(f64),
    Channels { count: usize, p: f64 },
    Random { exp_lo: f64, exp_hi: f64 },
    Fracture { p: f64 },
    File(std::path::PathBuf),
}

#[derive(Debug, Clone)]
pub struct CoefficientField {
    pub pattern: Pattern,
    pub seed: u64,
    values: Vec<f64>,
}

impl CoefficientField {
    /// Coefficient of one square/cube cell.
    #[inline]
    pub fn value(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Write the field in the plain-text exchange format: first line
    /// `dim N m`, then one value per line in lexicographic cell order.
    pub fn write_file(&self, mesh: &StructuredMesh, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{} {} {}", mesh.dim, mesh.n_sub, mesh.m)?;
        for v in &self.values {
            writeln!(f, "{v:e}")?;
        }
        Ok(())
    }
}

/// Cell rows occupied by `count` evenly spaced channels in a subdomain of
/// `m` cells per direction. Channel j is a band of width 2 (1 for odd m)
/// centered at height fraction (2j+1)/(2*count); ties round to even so the
/// arrangement stays mirror-symmetric about the subdomain interfaces, which
/// the adaptive eigenproblems rely on for symmetric coefficient fields.
fn channel_rows(m: usize, count: usize) -> Vec<usize> {
    let w = if m % 2 == 0 { 2usize } else { 1 };
    let mut rows = Vec::new();
    for j in 0..count {
        let center = (2 * j + 1) as f64 * m as f64 / (2 * count) as f64;
        let a = (center - w as f64 / 2.0).round_ties_even().max(0.0) as usize;
        for r in a..(a + w).min(m) {
            rows.push(r);
        }
    }
    rows.sort_unstable();
    rows.dedup();
    rows
}

/// Generate a coefficient field on the mesh.
pub fn generate_coefficient(
    mesh: &StructuredMesh,
    pattern: Pattern,
    seed: u64,
) -> Result<CoefficientField> {
    let n = mesh.num_cells();
    let values = match &pattern {
        Pattern::Constant(c) => {
            if *c <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "coefficient must be positive, got {c}"
                )));
            }
            vec![*c; n]
        }
        Pattern::Channels { count, p } => {
            if *p <= 0.0 {
                return Err(Error::InvalidParameter("channel value must be positive".into()));
            }
            if *count == 0 || *count >= mesh.m {
                return Err(Error::InvalidParameter(format!(
                    "channel count must be in 1..m, got {count}"
                )));
            }
            let rows = channel_rows(mesh.m, *count);
            let mut v = vec![1.0; n];
            for cell in 0..n {
                let c = mesh.cell_coord(cell);
                let local = [c[0] % mesh.m, c[1] % mesh.m, c[2] % mesh.m];
                let hit = if mesh.dim == 2 {
                    rows.contains(&local[1])
                } else {
                    // Rods along the x axis through the subdomain center
                    // region (two cells short of the faces), square
                    // cross-section at the band positions.
                    local[0] >= 2
                        && local[0] + 2 < mesh.m
                        && rows.contains(&local[1])
                        && rows.contains(&local[2])
                };
                if hit {
                    v[cell] = *p;
                }
            }
            v
        }
        Pattern::Random { exp_lo, exp_hi } => {
            if exp_lo >= exp_hi {
                return Err(Error::InvalidParameter("empty exponent range".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| 10f64.powf(rng.gen_range(*exp_lo..*exp_hi)))
                .collect()
        }
        Pattern::Fracture { p } => {
            if *p <= 0.0 {
                return Err(Error::InvalidParameter("fracture value must be positive".into()));
            }
            let mut v = vec![1.0; n];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let last = mesh.cells_per_dir() - 1;
            let mut c = [0usize; 3];
            loop {
                v[mesh.cell_id(c)] = *p;
                let free: Vec<usize> = (0..mesh.dim).filter(|&d| c[d] < last).collect();
                if free.is_empty() {
                    break;
                }
                let d = free[rng.gen_range(0..free.len())];
                c[d] += 1;
            }
            v
        }
        Pattern::File(path) => {
            let f = std::fs::File::open(path)?;
            let mut lines = BufReader::new(f).lines();
            let header = lines
                .next()
                .ok_or_else(|| Error::InvalidParameter("empty coefficient file".into()))??;
            let head: Vec<usize> = header
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidParameter(format!("bad header: {e}")))?;
            if head != vec![mesh.dim, mesh.n_sub, mesh.m] {
                return Err(Error::InvalidParameter(format!(
                    "coefficient file header {head:?} does not match mesh ({}, {}, {})",
                    mesh.dim, mesh.n_sub, mesh.m
                )));
            }
            let mut v = Vec::with_capacity(n);
            for line in lines {
                let line = line?;
                let t = line.trim();
                if t.is_empty() {
                    continue;
                }
                let x: f64 = t
                    .parse()
                    .map_err(|e| Error::InvalidParameter(format!("bad value: {e}")))?;
                if x <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "coefficient must be positive, got {x}"
                    )));
                }
                v.push(x);
            }
            if v.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "coefficient file has {} cells, mesh needs {n}",
                    v.len()
                )));
            }
            v
        }
    };
    Ok(CoefficientField {
        pattern,
        seed,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    #[test]
    fn constant_field() {
        let mesh = build_mesh(2, 2, 3).unwrap();
        let c = generate_coefficient(&mesh, Pattern::Constant(1.0), 0).unwrap();
        assert!(c.values().iter().all(|&v| v == 1.0));
        assert_eq!(c.len(), 36);
    }

    #[test]
    fn random_in_range_and_deterministic() {
        let mesh = build_mesh(2, 3, 6).unwrap();
        let a = generate_coefficient(
            &mesh,
            Pattern::Random {
                exp_lo: -3.0,
                exp_hi: 3.0,
            },
            42,
        )
        .unwrap();
        assert!(a.values().iter().all(|&v| v > 1e-3 && v < 1e3));
        let b = generate_coefficient(
            &mesh,
            Pattern::Random {
                exp_lo: -3.0,
                exp_hi: 3.0,
            },
            42,
        )
        .unwrap();
        assert_eq!(a.values(), b.values());
        let c = generate_coefficient(
            &mesh,
            Pattern::Random {
                exp_lo: -3.0,
                exp_hi: 3.0,
            },
            43,
        )
        .unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn channel_fraction_2d() {
        // m = 14 splits into 7 bands of 2 cells; three channel bands of two
        // cells each per subdomain column.
        let mesh = build_mesh(2, 3, 14).unwrap();
        let c = generate_coefficient(
            &mesh,
            Pattern::Channels {
                count: 3,
                p: 1e6,
            },
            0,
        )
        .unwrap();
        let nc = mesh.cells_per_dir();
        for ix in 0..nc {
            let hits = (0..nc)
                .filter(|&iy| c.value(mesh.cell_id([ix, iy, 0])) == 1e6)
                .count();
            assert_eq!(hits, 3 * 6, "column {ix}");
        }
    }

    #[test]
    fn channels_mirror_symmetric_about_interfaces() {
        for (m, count) in [(14usize, 3usize), (8, 1), (12, 1), (6, 2)] {
            let rows = super::channel_rows(m, count);
            let mirrored: std::collections::BTreeSet<usize> =
                rows.iter().map(|&r| m - 1 - r).collect();
            let original: std::collections::BTreeSet<usize> = rows.iter().copied().collect();
            assert_eq!(original, mirrored, "m={m} count={count}");
        }
    }

    #[test]
    fn channels_replicated_across_subdomains() {
        let mesh = build_mesh(2, 2, 6).unwrap();
        let c = generate_coefficient(&mesh, Pattern::Channels { count: 2, p: 10.0 }, 0).unwrap();
        for iy in 0..6 {
            for ix in 0..6 {
                let base = c.value(mesh.cell_id([ix, iy, 0]));
                for sx in 0..2 {
                    for sy in 0..2 {
                        let v = c.value(mesh.cell_id([ix + 6 * sx, iy + 6 * sy, 0]));
                        assert_eq!(base, v);
                    }
                }
            }
        }
    }

    #[test]
    fn fracture_spans_diagonal() {
        let mesh = build_mesh(2, 2, 5).unwrap();
        let c = generate_coefficient(&mesh, Pattern::Fracture { p: 1e3 }, 7).unwrap();
        let last = mesh.cells_per_dir() - 1;
        assert_eq!(c.value(mesh.cell_id([0, 0, 0])), 1e3);
        assert_eq!(c.value(mesh.cell_id([last, last, 0])), 1e3);
        // Walk length is exactly 2*last + 1 cells in 2D.
        let marked = c.values().iter().filter(|&&v| v == 1e3).count();
        assert_eq!(marked, 2 * last + 1);
    }

    #[test]
    fn file_roundtrip_and_validation() {
        let mesh = build_mesh(2, 2, 2).unwrap();
        let a = generate_coefficient(
            &mesh,
            Pattern::Random {
                exp_lo: -1.0,
                exp_hi: 1.0,
            },
            5,
        )
        .unwrap();
        let dir = std::env::temp_dir();
        let path = dir.join("substruct_coeff_test.txt");
        a.write_file(&mesh, &path).unwrap();
        let b = generate_coefficient(&mesh, Pattern::File(path.clone()), 0).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-15 * x.abs());
        }
        // Wrong mesh is rejected.
        let other = build_mesh(2, 2, 3).unwrap();
        assert!(generate_coefficient(&other, Pattern::File(path), 0).is_err());
    }

    #[test]
    fn rejects_nonpositive() {
        let mesh = build_mesh(2, 2, 2).unwrap();
        assert!(generate_coefficient(&mesh, Pattern::Constant(0.0), 0).is_err());
        assert!(generate_coefficient(&mesh, Pattern::Channels { count: 1, p: -3.0 }, 0).is_err());
    }
}
