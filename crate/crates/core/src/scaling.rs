//! Multiplicity and deluxe scaling matrices per equivalence class.
//!
//! Every class carries one scaling matrix per sharing subdomain and the set
//! satisfies the partition of unity `sum_l D_C^(l) = I`. Multiplicity uses
//! `1/|I(C)|`; deluxe uses `(sum_l S_C^(l))^{-1} S_C^(m)` built from the
//! principal class blocks.

use crate::decomp::Decomposition;
use crate::linalg::{min_eig, pseudo_inverse, DEFAULT_REL_TOL};
use crate::{DMat, Error, Result};
use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalingKind {
    Multiplicity,
    Deluxe,
}

/// Scaling matrices for every class: `blocks[class][sharer_pos]`.
#[derive(Debug, Clone)]
pub struct ScalingSet {
    pub kind: ScalingKind,
    pub blocks: Vec<Vec<DMat>>,
}

/// Multiplicity entry for one class: `(1/q) I` for each of the q sharers.
pub fn multiplicity_scaling(size: usize, sharers: usize) -> Vec<DMat> {
    let d = DMat::identity(size, size) / sharers as f64;
    vec![d; sharers]
}

/// Deluxe entry for one class: `D^(m) = (sum_l S^(l))^{-1} S^(m)`. A singular
/// sum falls back to the pseudo-inverse, which yields a partition of unity
/// on the range of the sum only.
pub fn deluxe_scaling(class_blocks: &[DMat]) -> Result<Vec<DMat>> {
    if class_blocks.is_empty() {
        return Err(Error::InvalidParameter("deluxe needs at least one block".into()));
    }
    let n = class_blocks[0].nrows();
    let mut sum = DMat::zeros(n, n);
    for b in class_blocks {
        if b.nrows() != n || b.ncols() != n {
            return Err(Error::DimensionMismatch("deluxe class blocks".into()));
        }
        sum += b;
    }
    match Cholesky::new(sum.clone()) {
        Some(chol) => Ok(class_blocks.iter().map(|b| chol.solve(b)).collect()),
        None => {
            eprintln!(
                "warning: singular class block sum in deluxe scaling; using pseudo-inverse"
            );
            let pinv = pseudo_inverse(&sum, DEFAULT_REL_TOL)?;
            Ok(class_blocks.iter().map(|b| &pinv * b).collect())
        }
    }
}

/// Build the scaling set for all classes. `principal[class][sharer_pos]`
/// must hold the principal class blocks when deluxe is requested (they are
/// ignored for multiplicity). Vertex classes always use multiplicity: they
/// are primal, so the choice is inert in the preconditioner, but the blocks
/// keep the partition-of-unity audit complete.
pub fn build_scalings(
    decomp: &Decomposition,
    kind: ScalingKind,
    principal: Option<&Vec<Vec<DMat>>>,
) -> Result<ScalingSet> {
    let mut blocks = Vec::with_capacity(decomp.classes.len());
    for c in &decomp.classes {
        let entry = match kind {
            ScalingKind::Multiplicity => multiplicity_scaling(c.size(), c.sharers.len()),
            ScalingKind::Deluxe => {
                if c.kind == crate::decomp::ClassKind::Vertex {
                    multiplicity_scaling(c.size(), c.sharers.len())
                } else {
                    let p = principal.ok_or_else(|| {
                        Error::Config("deluxe scaling needs principal class blocks".into())
                    })?;
                    deluxe_scaling(&p[c.id])?
                }
            }
        };
        blocks.push(entry);
    }
    Ok(ScalingSet { kind, blocks })
}

impl ScalingSet {
    /// Largest partition-of-unity defect over all classes.
    pub fn partition_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for entry in &self.blocks {
            if entry.is_empty() {
                continue;
            }
            let n = entry[0].nrows();
            let mut sum = DMat::zeros(n, n);
            for d in entry {
                sum += d;
            }
            worst = worst.max((sum - DMat::identity(n, n)).amax());
        }
        worst
    }
}

/// Transformed deluxe blocks `(sum_l S-check^(l))^{-1} S-check^(m)` from the
/// change-of-basis-transformed class blocks. The caller partitions the
/// result at the primal/dual split index.
pub fn transformed_deluxe(transformed_blocks: &[DMat]) -> Result<Vec<DMat>> {
    deluxe_scaling(transformed_blocks)
}

/// Check that deluxe scalings degrade gracefully: when every sharer has the
/// same block the deluxe formula reduces to multiplicity.
pub fn deluxe_reduces_to_multiplicity(blocks: &[DMat]) -> Result<f64> {
    let d = deluxe_scaling(blocks)?;
    let q = blocks.len() as f64;
    let n = blocks[0].nrows();
    let mut worst = 0.0f64;
    for m in &d {
        worst = worst.max((m - DMat::identity(n, n) / q).amax());
    }
    Ok(worst)
}

/// PSD-order sanity used in tests: `0 <= D^T S D` for any scaling `D`.
pub fn scaled_energy_psd(s: &DMat, d: &DMat) -> bool {
    min_eig(&(d.transpose() * s * d)) >= -1e-10 * s.amax().max(1.0)
}
