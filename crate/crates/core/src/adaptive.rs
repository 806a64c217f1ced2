//! Adaptive coarse-space construction: generalized eigenvalue problems per
//! face and edge, primal-constraint selection against a tolerance, and the
//! per-class change-of-basis matrices that make selected eigenvectors
//! explicit primal coordinates.
//!
//! Face problem (two sharers i, j):
//!   `[(D^(j))^T S^(i) D^(j) + (D^(i))^T S^(j) D^(i)] v = lambda (St^(i):St^(j)) v`
//! Edge problem (sharers I(E)):
//!   `[sum_m sum_{l != m} (D^(l))^T S^(m) D^(l)] v = lambda (St fold) v`
//! where `S` are principal class blocks, `St` class-interior Schur
//! complements, and `:` the parallel sum.

use crate::linalg::{
    generalized_eig, min_eig, parallel_sum, parallel_sum_fold, symmetrize, EigPair,
};
use crate::{DMat, DVec, Error, Result};

/// Rank cutoff of the class eigenproblems. Condensing local blocks at
/// coefficient contrast up to 1e6 leaves roundoff of order 1e-10 relative to
/// the largest eigenvalue in what are exact null directions (the constants
/// of floating condensations); the cutoff must sit above that and below the
/// smallest genuine eigenvalues (~1e-8 relative at desk scale).
pub const GEVP_RANK_TOL: f64 = 1e-9;

/// GEVP outcome for one class: left matrix, sorted eigenpairs (infinite
/// first), and the selected primal indices.
#[derive(Debug, Clone)]
pub struct EigSelection {
    pub class_id: usize,
    /// Left-hand quadratic form A_C; also defines the constraint functionals
    /// `(A_C v_n)^T` and the coarse projector.
    pub left: DMat,
    pub pairs: Vec<EigPair>,
    pub joint_null: Vec<DVec>,
    /// Tolerance used by the last selection (NaN before selection).
    pub tol: f64,
    /// Indices into `pairs` of the selected eigenvectors.
    pub selected: Vec<usize>,
}

impl EigSelection {
    pub fn selected_count(&self) -> usize {
        self.selected.len()
    }

    pub fn selected_vectors(&self) -> Vec<DVec> {
        self.selected
            .iter()
            .map(|&i| self.pairs[i].vector.clone())
            .collect()
    }

    pub fn finite_values(&self) -> Vec<f64> {
        self.pairs
            .iter()
            .filter(|p| p.value.is_finite())
            .map(|p| p.value)
            .collect()
    }

    pub fn infinite_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.value.is_infinite()).count()
    }

    /// Coarse component `Pi w = sum_n <A_C w, v_n> v_n` over the selected
    /// eigenvectors (they are A_C-orthonormal).
    pub fn coarse_project(&self, w: &DVec) -> DVec {
        let mut out = DVec::zeros(w.len());
        let aw = &self.left * w;
        for &i in &self.selected {
            let v = &self.pairs[i].vector;
            let coeff = aw.dot(v);
            out += v * coeff;
        }
        out
    }
}

fn check_partition_of_unity(ds: &[&DMat]) -> Result<()> {
    let n = ds[0].nrows();
    let mut sum = DMat::zeros(n, n);
    for d in ds {
        sum += *d;
    }
    let defect = (sum - DMat::identity(n, n)).amax();
    if defect > 1e-8 {
        return Err(Error::Config(format!(
            "scaling partition of unity violated (defect {defect:.3e})"
        )));
    }
    Ok(())
}

/// Face GEVP with general scalings.
pub fn face_gevp(
    class_id: usize,
    s_i: &DMat,
    s_j: &DMat,
    st_i: &DMat,
    st_j: &DMat,
    d_i: &DMat,
    d_j: &DMat,
) -> Result<EigSelection> {
    check_partition_of_unity(&[d_i, d_j])?;
    let left = symmetrize(&(d_j.transpose() * s_i * d_j + d_i.transpose() * s_j * d_i));
    let right = parallel_sum(st_i, st_j)?;
    let g = generalized_eig(&left, &right, GEVP_RANK_TOL)?;
    Ok(EigSelection {
        class_id,
        left,
        pairs: g.pairs,
        joint_null: g.joint_null,
        tol: f64::NAN,
        selected: Vec::new(),
    })
}

/// The two face GEVPs of the two-problem variant: type 1 compares the
/// condensed blocks of the two sharers directly, type 2 compares the summed
/// principal blocks against the summed condensed blocks.
pub fn face_gevp_pair(
    class_id: usize,
    st_i: &DMat,
    st_j: &DMat,
    s_i: &DMat,
    s_j: &DMat,
) -> Result<(EigSelection, EigSelection)> {
    let g1 = generalized_eig(st_i, st_j, GEVP_RANK_TOL)?;
    let type1 = EigSelection {
        class_id,
        left: st_i.clone(),
        pairs: g1.pairs,
        joint_null: g1.joint_null,
        tol: f64::NAN,
        selected: Vec::new(),
    };
    let left2 = symmetrize(&(s_i + s_j));
    let right2 = symmetrize(&(st_i + st_j));
    let g2 = generalized_eig(&left2, &right2, GEVP_RANK_TOL)?;
    let type2 = EigSelection {
        class_id,
        left: left2,
        pairs: g2.pairs,
        joint_null: g2.joint_null,
        tol: f64::NAN,
        selected: Vec::new(),
    };
    Ok((type1, type2))
}

/// Edge GEVP over all sharers. `s[m]`, `st[m]`, `d[m]` are the principal
/// block, condensed block, and scaling of sharer position m. The matrix
/// inequalities `A_E^(m) <= A_E` and `St_E <= St_E^(m)` are checked here;
/// they hold by construction and a violation signals a numerical anomaly.
pub fn edge_gevp(class_id: usize, s: &[DMat], st: &[DMat], d: &[DMat]) -> Result<EigSelection> {
    let q = s.len();
    if q < 3 {
        return Err(Error::Config(format!(
            "edge class {class_id} shared by {q} subdomains; edges need more than two"
        )));
    }
    check_partition_of_unity(&d.iter().collect::<Vec<_>>())?;
    let n = s[0].nrows();
    let mut left = DMat::zeros(n, n);
    for m in 0..q {
        for l in 0..q {
            if l != m {
                left += d[l].transpose() * &s[m] * &d[l];
            }
        }
    }
    let left = symmetrize(&left);
    let right = parallel_sum_fold(st)?;

    let scale = left.amax().max(1.0);
    for m in 0..q {
        let mut a_m = DMat::zeros(n, n);
        for l in 0..q {
            if l != m {
                a_m += d[l].transpose() * &s[m] * &d[l];
                a_m += d[m].transpose() * &s[l] * &d[m];
            }
        }
        if min_eig(&(&left - symmetrize(&a_m))) < -1e-8 * scale {
            return Err(Error::Config(format!(
                "edge {class_id}: per-sharer form exceeds the edge form"
            )));
        }
        if min_eig(&(&st[m] - &right)) < -1e-8 * st[m].amax().max(1.0) {
            return Err(Error::Config(format!(
                "edge {class_id}: parallel sum exceeds a condensed block"
            )));
        }
    }

    let g = generalized_eig(&left, &right, GEVP_RANK_TOL)?;
    Ok(EigSelection {
        class_id,
        left,
        pairs: g.pairs,
        joint_null: g.joint_null,
        tol: f64::NAN,
        selected: Vec::new(),
    })
}

/// Select eigenvectors with `lambda >= tol` (ties inclusive; infinite values
/// always selected).
pub fn select_primal(sel: &mut EigSelection, tol: f64) {
    sel.tol = tol;
    sel.selected = sel
        .pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.value.is_infinite() || p.value >= tol)
        .map(|(i, _)| i)
        .collect();
}

/// Two-sided selection for the type-1 face problem: both `lambda >= tol`
/// and `lambda <= 1/tol` flag a one-sided energy imbalance. With symmetric
/// coefficients the selection is empty.
pub fn select_primal_two_sided(sel: &mut EigSelection, tol: f64) {
    sel.tol = tol;
    sel.selected = sel
        .pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.value.is_infinite() || p.value >= tol || p.value <= 1.0 / tol)
        .map(|(i, _)| i)
        .collect();
}

/// Change-of-basis matrix of one class: the first `k` columns span the
/// primal constraint space (A_C-orthonormalized), the rest a basis of the
/// A_C-orthogonal complement, so equality of the leading k transformed
/// coordinates enforces exactly the selected constraints.
#[derive(Debug, Clone)]
pub struct ChangeOfBasis {
    pub p: DMat,
    pub k: usize,
}

impl ChangeOfBasis {
    pub fn identity(n: usize) -> Self {
        ChangeOfBasis {
            p: DMat::identity(n, n),
            k: 0,
        }
    }

    pub fn size(&self) -> usize {
        self.p.nrows()
    }

    /// Congruence transform of a class block: `P^T S P`.
    pub fn transform(&self, s: &DMat) -> DMat {
        symmetrize(&(self.p.transpose() * s * &self.p))
    }
}

/// Build the change of basis from the primal vectors of one class. Vectors
/// that are A_C-dependent on earlier ones are dropped with a warning (the
/// two-problem variant can select overlapping spans). The complement is the
/// A_C-orthogonal complement of the primal span.
pub fn change_of_basis(a_c: &DMat, primal_vectors: &[DVec]) -> Result<ChangeOfBasis> {
    let n = a_c.nrows();
    if primal_vectors.is_empty() {
        return Ok(ChangeOfBasis::identity(n));
    }

    // Modified Gram-Schmidt in the A_C inner product. The resulting columns
    // are rescaled to unit Euclidean length afterwards: at high contrast an
    // A-normalized eigenvector can be tiny, and mixing such columns with the
    // unit complement would square the contrast into the condition number of
    // the transformed blocks. Rescaling a primal coordinate on all sharers
    // at once leaves the enforced constraint set unchanged.
    let mut basis: Vec<DVec> = Vec::new();
    for v in primal_vectors {
        let mut w = v.clone();
        for b in &basis {
            let coeff = (a_c * b).dot(&w) / (a_c * b).dot(b);
            w -= b * coeff;
        }
        let energy = (a_c * &w).dot(&w);
        let orig = (a_c * v).dot(v).max(1e-300);
        if energy > 1e-20 * orig.max(1.0) && energy > 0.0 {
            let nrm = w.norm();
            if nrm > 0.0 {
                basis.push(w / nrm);
            }
        } else {
            eprintln!("warning: dropping A-dependent primal vector during change of basis");
        }
    }
    let k = basis.len();
    if k == n {
        let mut p = DMat::zeros(n, n);
        for (j, b) in basis.iter().enumerate() {
            p.set_column(j, b);
        }
        return Ok(ChangeOfBasis { p, k });
    }

    // Complement: null space of (A_C V)^T via SVD of the n x k matrix A_C V.
    let mut av = DMat::zeros(n, k);
    for (j, b) in basis.iter().enumerate() {
        av.set_column(j, &(a_c * b));
    }
    let svd = av.svd(true, false);
    let u = svd.u.as_ref().expect("svd with u requested");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-12 * smax.max(f64::MIN_POSITIVE))
        .count();
    // Full orthonormal complement of range(A_C V) inside R^n.
    let full = complete_orthonormal(u, rank, n);

    let mut p = DMat::zeros(n, n);
    for (j, b) in basis.iter().enumerate() {
        p.set_column(j, b);
    }
    for (j, col) in full.into_iter().enumerate() {
        p.set_column(k + j, &col);
    }
    // Guard against a degenerate completion.
    if p.clone().lu().determinant().abs() < 1e-300 {
        return Err(Error::Factorization(
            "change of basis is singular after completion".into(),
        ));
    }
    Ok(ChangeOfBasis { p, k })
}

/// Orthonormal vectors spanning the complement of the first `rank` columns
/// of `u` (which are orthonormal) in R^n.
fn complete_orthonormal(u: &DMat, rank: usize, n: usize) -> Vec<DVec> {
    let mut out: Vec<DVec> = Vec::with_capacity(n - rank);
    let mut held: Vec<DVec> = (0..rank).map(|j| u.column(j).clone_owned()).collect();
    for axis in 0..n {
        if held.len() == n {
            break;
        }
        let mut w = DVec::zeros(n);
        w[axis] = 1.0;
        for h in &held {
            let c = h.dot(&w);
            w -= h * c;
        }
        let nrm = w.norm();
        if nrm > 1e-8 {
            let w = w / nrm;
            held.push(w.clone());
            out.push(w);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMat {
        let f = DMat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &f * f.transpose() + DMat::identity(n, n) * shift
    }

    #[test]
    fn symmetric_face_multiplicity_matches_deluxe_selection() {
        // Equal blocks: deluxe is multiplicity, and the eigenvalues of the
        // scaled problem coincide with the unscaled pencil (S, St:St) up to
        // the 1/2-scaling factors on both sides.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_spd(&mut rng, 6, 0.3);
        let st = random_spd(&mut rng, 6, 0.1);
        let half = DMat::identity(6, 6) * 0.5;
        let mut mult = face_gevp(0, &s, &s, &st, &st, &half, &half).unwrap();
        let d = crate::scaling::deluxe_scaling(&[s.clone(), s.clone()]).unwrap();
        let mut del = face_gevp(0, &s, &s, &st, &st, &d[0], &d[1]).unwrap();
        let tol = 2.0;
        select_primal(&mut mult, tol);
        select_primal(&mut del, tol);
        assert_eq!(mult.selected_count(), del.selected_count());
        for (p, q) in mult.pairs.iter().zip(&del.pairs) {
            if p.value.is_finite() {
                assert!((p.value - q.value).abs() < 1e-8 * (1.0 + p.value));
            }
        }
        // And the same eigenvalues as the halved-sides problem S v = l St v.
        let doubled = crate::linalg::parallel_sum(&st, &st).unwrap() * 2.0;
        let plain = generalized_eig(&s, &doubled, 1e-12).unwrap();
        for (p, q) in mult.pairs.iter().zip(&plain.pairs) {
            if p.value.is_finite() {
                assert!((p.value - q.value).abs() < 1e-8 * (1.0 + p.value));
            }
        }
    }

    #[test]
    fn face_gevp_rejects_bad_partition() {
        let s = DMat::identity(3, 3);
        let d = DMat::identity(3, 3) * 0.4;
        assert!(face_gevp(0, &s, &s, &s, &s, &d, &d).is_err());
    }

    #[test]
    fn selected_pairs_satisfy_threshold_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s_i = random_spd(&mut rng, 7, 0.2);
        let s_j = random_spd(&mut rng, 7, 0.2);
        let st_i = random_spd(&mut rng, 7, 0.05);
        let st_j = random_spd(&mut rng, 7, 0.05);
        let half = DMat::identity(7, 7) * 0.5;
        let mut sel = face_gevp(0, &s_i, &s_j, &st_i, &st_j, &half, &half).unwrap();
        let tol = 1.5;
        select_primal(&mut sel, tol);
        let right = parallel_sum(&st_i, &st_j).unwrap();
        for &i in &sel.selected {
            let v = &sel.pairs[i].vector;
            let num = (&sel.left * v).dot(v);
            let den = (&right * v).dot(v);
            assert!(num >= tol * den - 1e-8 * num.abs().max(1.0));
        }
    }

    #[test]
    fn pair_type1_empty_for_symmetric_and_type2_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_spd(&mut rng, 5, 0.3);
        let st = random_spd(&mut rng, 5, 0.1);
        let (mut t1, mut t2) = face_gevp_pair(0, &st, &st, &s, &s).unwrap();
        let tol = 3.0;
        select_primal_two_sided(&mut t1, tol);
        select_primal(&mut t2, tol);
        assert_eq!(t1.selected_count(), 0, "symmetric type-1 selects nothing");
        // Type 2 carries the same spectrum as the scaled face problem.
        let half = DMat::identity(5, 5) * 0.5;
        let plain = face_gevp(0, &s, &s, &st, &st, &half, &half).unwrap();
        for (p, q) in t2.pairs.iter().zip(&plain.pairs) {
            if p.value.is_finite() {
                assert!((p.value - q.value).abs() < 1e-8 * (1.0 + p.value.abs()));
            }
        }
    }

    #[test]
    fn pair_type1_flags_both_tails() {
        let st_i = DMat::from_diagonal(&DVec::from_vec(vec![10.0, 1.0, 0.1]));
        let st_j = DMat::identity(3, 3);
        let (mut t1, _) = face_gevp_pair(0, &st_i, &st_j, &st_i, &st_j).unwrap();
        select_primal_two_sided(&mut t1, 5.0);
        // lambda = {10, 1, 0.1}: 10 >= 5 and 0.1 <= 1/5 both selected.
        assert_eq!(t1.selected_count(), 2);
    }

    #[test]
    fn edge_gevp_rejects_two_sharers() {
        let s = DMat::identity(2, 2);
        assert!(edge_gevp(0, &[s.clone(), s.clone()], &[s.clone(), s.clone()], &[
            DMat::identity(2, 2) * 0.5,
            DMat::identity(2, 2) * 0.5
        ])
        .is_err());
    }

    #[test]
    fn edge_gevp_symmetric_sharers() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_spd(&mut rng, 4, 0.3);
        let st = random_spd(&mut rng, 4, 0.1);
        let q = 4;
        let d: Vec<DMat> = (0..q).map(|_| DMat::identity(4, 4) / q as f64).collect();
        let ss: Vec<DMat> = (0..q).map(|_| s.clone()).collect();
        let sts: Vec<DMat> = (0..q).map(|_| st.clone()).collect();
        let sel = edge_gevp(0, &ss, &sts, &d).unwrap();
        // Symmetric data: left = q(q-1)/q^2 S = (q-1)/q S, right = St/q.
        let left_expect = &s * ((q - 1) as f64 / q as f64);
        assert!((&sel.left - &left_expect).amax() < 1e-10 * s.amax());
        assert!(!sel.pairs.is_empty());
    }

    #[test]
    fn selection_monotone_in_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_spd(&mut rng, 8, 0.2);
        let b = random_spd(&mut rng, 8, 0.05);
        let half = DMat::identity(8, 8) * 0.5;
        let mut sel = face_gevp(0, &a, &a, &b, &b, &half, &half).unwrap();
        let mut last = usize::MAX;
        for tol in [0.1, 1.0, 3.0, 10.0, 1e6] {
            select_primal(&mut sel, tol);
            assert!(sel.selected_count() <= last);
            last = sel.selected_count();
        }
        // Below the smallest eigenvalue everything is selected.
        select_primal(&mut sel, 0.0);
        assert_eq!(sel.selected_count(), sel.pairs.len());
        // Infinite tolerance keeps only infinite pairs.
        select_primal(&mut sel, f64::INFINITY);
        assert_eq!(sel.selected_count(), sel.infinite_count());
    }

    #[test]
    fn change_of_basis_roundtrip_and_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_spd(&mut rng, 6, 0.3);
        let b = random_spd(&mut rng, 6, 0.1);
        let half = DMat::identity(6, 6) * 0.5;
        let mut sel = face_gevp(0, &a, &a, &b, &b, &half, &half).unwrap();
        select_primal(&mut sel, 1.0);
        let k = sel.selected_count();
        assert!(k > 0, "test needs a nonempty selection");
        let cb = change_of_basis(&sel.left, &sel.selected_vectors()).unwrap();
        assert_eq!(cb.k, k);
        let pinv = cb.p.clone().try_inverse().unwrap();
        assert!((&cb.p * &pinv - DMat::identity(6, 6)).amax() < 1e-10);

        // Two vectors with equal leading-k transformed coordinates satisfy
        // the constraints <A_F (w_i - w_j), v_l> = 0.
        let mut xi = DVec::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        let mut xj = DVec::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        for l in 0..k {
            let shared = rng.gen_range(-1.0..1.0);
            xi[l] = shared;
            xj[l] = shared;
        }
        let wi = &cb.p * &xi;
        let wj = &cb.p * &xj;
        let diff = wi - wj;
        for &i in &sel.selected {
            let c = (&sel.left * &diff).dot(&sel.pairs[i].vector);
            assert!(c.abs() < 1e-10 * sel.left.amax(), "constraint violated: {c}");
        }

        // Congruence with k = 0 keeps the spectrum.
        let cb0 = change_of_basis(&sel.left, &[]).unwrap();
        assert_eq!(cb0.k, 0);
        let transformed = cb0.transform(&a);
        assert!((transformed - a.clone()).amax() < 1e-12);
    }

    #[test]
    fn change_of_basis_drops_dependent_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_spd(&mut rng, 5, 0.5);
        let v = DVec::from_fn(5, |_, _| rng.gen_range(-1.0..1.0));
        let cb = change_of_basis(&a, &[v.clone(), &v * 2.0]).unwrap();
        assert_eq!(cb.k, 1);
        assert!(cb.p.clone().try_inverse().is_some());
    }
}
