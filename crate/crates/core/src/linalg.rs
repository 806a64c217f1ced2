//! Dense symmetric kernels: spectral pseudo-inverse, parallel sum, and a
//! generalized symmetric eigensolver for PSD pencils with infinite-eigenvalue
//! semantics.
//!
//! The generalized problem `A v = lambda B v` with both matrices symmetric
//! positive semidefinite has eigenvalues in `(0, inf]` once vectors in the
//! joint null space of A and B are removed: a vector with B-energy zero but
//! positive A-energy is reported with `lambda = inf`.

use crate::{DMat, DVec, Error, Result};

/// Default relative cutoff for rank decisions in pseudo-inverses and pencil
/// factorizations. High-contrast coefficients produce genuine eigenvalues
/// down to ~1e-6 of the largest, so the cutoff sits far below that.
pub const DEFAULT_REL_TOL: f64 = 1e-12;

/// One eigenpair of a PSD pencil. `value` is `f64::INFINITY` for vectors
/// with zero B-energy. Vectors are normalized in the A-inner product where
/// A-energy is positive; zero-energy vectors keep Euclidean norm one.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub value: f64,
    pub vector: DVec,
}

/// Result of `generalized_eig`: pairs sorted descending with infinite values
/// first, plus a basis of the discarded joint null space (vectors invisible
/// to both quadratic forms).
#[derive(Debug, Clone)]
pub struct GenEig {
    pub pairs: Vec<EigPair>,
    pub joint_null: Vec<DVec>,
}

impl GenEig {
    pub fn infinite_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.value.is_infinite()).count()
    }
}

fn symmetry_deviation(m: &DMat) -> f64 {
    let mut dev = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            dev = dev.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    dev
}

fn check_symmetric(m: &DMat) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} not square",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.amax().max(1.0);
    let dev = symmetry_deviation(m);
    if dev > 1e-8 * scale {
        return Err(Error::NotSymmetric(dev));
    }
    Ok(())
}

/// Force exact symmetry by averaging with the transpose.
pub fn symmetrize(m: &DMat) -> DMat {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
///
/// Cyclic Jacobi with quadratic convergence. The class problems carry
/// clusters of nearly degenerate eigenvalues on which shifted-QL
/// implementations lose accuracy, while Jacobi keeps residuals at machine
/// precision for the dense desk-scale blocks handled here.
pub fn sym_eig(m: &DMat) -> (DVec, DMat) {
    let mut a = symmetrize(m);
    let n = a.nrows();
    let mut v = DMat::identity(n, n);
    if n > 1 {
        let norm = a.amax().max(f64::MIN_POSITIVE);
        let tol = 1e-15 * norm;
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off = off.max(a[(p, q)].abs());
                }
            }
            if off <= tol {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq.abs() <= 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    // Rotate rows/columns p and q of A.
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
    let vals = DVec::from_fn(n, |k, _| a[(order[k], order[k])]);
    let vecs = DMat::from_fn(n, n, |i, k| v[(i, order[k])]);
    (vals, vecs)
}

/// Spectral (Moore-Penrose) pseudo-inverse of a symmetric PSD matrix.
/// Eigenvalues below `rel_tol * lambda_max` are treated as zero.
pub fn pseudo_inverse(m: &DMat, rel_tol: f64) -> Result<DMat> {
    check_symmetric(m)?;
    let (vals, vecs) = sym_eig(m);
    let n = vals.len();
    if n == 0 {
        return Ok(DMat::zeros(0, 0));
    }
    let lmax = vals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let cutoff = rel_tol * lmax;
    let mut pinv = DMat::zeros(n, n);
    for k in 0..n {
        if vals[k].abs() > cutoff {
            let v = vecs.column(k);
            let w = 1.0 / vals[k];
            for i in 0..n {
                for j in 0..n {
                    pinv[(i, j)] += w * v[i] * v[j];
                }
            }
        }
    }
    Ok(pinv)
}

/// Parallel sum `A:B = B (A+B)^+ A` of two symmetric PSD matrices, the
/// matrix analogue of the harmonic mean. The result is symmetrized to kill
/// roundoff asymmetry.
pub fn parallel_sum(a: &DMat, b: &DMat) -> Result<DMat> {
    check_symmetric(a)?;
    check_symmetric(b)?;
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "parallel_sum: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let pinv = pseudo_inverse(&(a + b), DEFAULT_REL_TOL)?;
    Ok(symmetrize(&(b * pinv * a)))
}

/// Left fold of `parallel_sum` over a list of PSD matrices. For SPD inputs
/// this equals `(sum of inverses)^-1` independent of fold order.
pub fn parallel_sum_fold(mats: &[DMat]) -> Result<DMat> {
    if mats.len() < 2 {
        return Err(Error::InvalidParameter(
            "parallel_sum_fold needs at least two matrices".into(),
        ));
    }
    let mut acc = parallel_sum(&mats[0], &mats[1])?;
    for m in &mats[2..] {
        acc = parallel_sum(&acc, m)?;
    }
    Ok(acc)
}

/// Generalized symmetric eigensolver for a PSD pencil `A v = lambda B v`.
///
/// Route: eigendecompose B to split the space into range(B) and null(B);
/// vectors of null(B) with positive A-energy become infinite eigenpairs;
/// the joint null space is discarded; the finite part solves the pencil on
/// the constrained complement (A-harmonic into null(B)) where B is SPD.
pub fn generalized_eig(a: &DMat, b: &DMat, rel_tol: f64) -> Result<GenEig> {
    check_symmetric(a)?;
    check_symmetric(b)?;
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "generalized_eig: {} vs {}",
            n,
            b.nrows()
        )));
    }
    if n == 0 {
        return Ok(GenEig {
            pairs: vec![],
            joint_null: vec![],
        });
    }

    let (bvals, bvecs) = sym_eig(b);
    let bmax = bvals.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let bcut = rel_tol * bmax.max(f64::MIN_POSITIVE);
    let range_idx: Vec<usize> = (0..n).filter(|&k| bvals[k] > bcut).collect();
    let null_idx: Vec<usize> = (0..n).filter(|&k| bvals[k] <= bcut).collect();

    let q1 = columns(&bvecs, &range_idx);
    let q0 = columns(&bvecs, &null_idx);
    let n1 = range_idx.len();
    let n0 = null_idx.len();

    let amax = a.amax().max(f64::MIN_POSITIVE);
    let acut = rel_tol * amax;

    let mut pairs: Vec<EigPair> = Vec::new();
    let mut joint_null: Vec<DVec> = Vec::new();

    // Null(B) part: A-positive directions are infinite modes, the rest is
    // the joint null space.
    let a00 = symmetrize(&(q0.transpose() * a * &q0));
    let mut a00_pinv = DMat::zeros(n0, n0);
    if n0 > 0 {
        let (avals, avecs) = sym_eig(&a00);
        for k in (0..n0).rev() {
            let v = q0.clone() * avecs.column(k).clone_owned();
            if avals[k] > acut {
                // A-normalize: energy of the raw vector is avals[k].
                pairs.push(EigPair {
                    value: f64::INFINITY,
                    vector: v / avals[k].sqrt(),
                });
                let col = avecs.column(k);
                let w = 1.0 / avals[k];
                for i in 0..n0 {
                    for j in 0..n0 {
                        a00_pinv[(i, j)] += w * col[i] * col[j];
                    }
                }
            } else {
                joint_null.push(v);
            }
        }
    }

    // Finite part: eigenvectors are A-orthogonal to null(B), i.e.
    // v = Q1 x - Q0 A00^+ A10 x, leading to the reduced SPD-B pencil
    // (A11 - A01 A00^+ A10) x = lambda diag(b) x.
    if n1 > 0 {
        let a11 = symmetrize(&(q1.transpose() * a * &q1));
        let reduced = if n0 > 0 {
            let a10 = q0.transpose() * a * &q1;
            symmetrize(&(&a11 - a10.transpose() * &a00_pinv * &a10))
        } else {
            a11
        };
        // Congruence with diag(b)^{-1/2} turns the pencil standard symmetric.
        let binv_sqrt = DVec::from_fn(n1, |k, _| 1.0 / bvals[range_idx[k]].sqrt());
        let mut c = reduced;
        for i in 0..n1 {
            for j in 0..n1 {
                c[(i, j)] *= binv_sqrt[i] * binv_sqrt[j];
            }
        }
        let (cvals, cvecs) = sym_eig(&c);
        let back = if n0 > 0 {
            let a10 = q0.transpose() * a * &q1;
            Some((a00_pinv.clone(), a10))
        } else {
            None
        };
        for k in (0..n1).rev() {
            let lambda = cvals[k].max(0.0);
            let mut x = cvecs.column(k).clone_owned();
            for i in 0..n1 {
                x[i] *= binv_sqrt[i];
            }
            let mut v = q1.clone() * &x;
            if let Some((ref pinv0, ref a10)) = back {
                let b0 = -(pinv0 * (a10 * &x));
                v += q0.clone() * b0;
            }
            // x is diag(b)-orthonormal, so the A-energy of v equals lambda.
            let vector = if lambda > rel_tol {
                v / lambda.sqrt()
            } else {
                let nrm = v.norm();
                if nrm > 0.0 {
                    v / nrm
                } else {
                    v
                }
            };
            pairs.push(EigPair {
                value: lambda,
                vector,
            });
        }
    }

    pairs.sort_by(|p, q| match (p.value.is_infinite(), q.value.is_infinite()) {
        (true, true) => std::cmp::Ordering::Equal,
        (true, false) => std::cmp::Ordering::Less,
        (false, true) => std::cmp::Ordering::Greater,
        (false, false) => q.value.partial_cmp(&p.value).unwrap(),
    });

    Ok(GenEig { pairs, joint_null })
}

/// Gather the listed columns of `m` into a new matrix.
pub fn columns(m: &DMat, idx: &[usize]) -> DMat {
    DMat::from_fn(m.nrows(), idx.len(), |i, k| m[(i, idx[k])])
}

/// Extract the principal submatrix `m[rows, cols]`.
pub fn submatrix(m: &DMat, rows: &[usize], cols: &[usize]) -> DMat {
    DMat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Smallest eigenvalue of a symmetric matrix; used in PSD-order checks.
pub fn min_eig(m: &DMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let (vals, _) = sym_eig(m);
    vals[0]
}
