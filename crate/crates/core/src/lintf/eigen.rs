use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use super::{LinError, StateSpace, SIMPLE_MODE_RTOL};
use crate::linalg::{self, CMat, CVec};

/// Eigenvalues with right (`phi`, columns) and left (`psi`, rows)
/// eigenvectors scaled so that `phi * psi = I`.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    eigenvalues: Vec<Complex64>,
    phi: CMat,
    psi: CMat,
    a_norm: f64,
}

impl EigenSystem {
    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }
    pub fn phi(&self) -> &CMat {
        &self.phi
    }
    pub fn psi(&self) -> &CMat {
        &self.psi
    }
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }
    /// Frobenius norm of the decomposed matrix.
    pub fn a_norm(&self) -> f64 {
        self.a_norm
    }

    pub fn right(&self, i: usize) -> CVec {
        self.phi.column(i).into_owned()
    }

    /// Left eigenvector as a column vector (row `i` of `psi`, not conjugated).
    pub fn left(&self, i: usize) -> CVec {
        self.psi.row(i).transpose()
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<(), LinError> {
        if i >= self.n() {
            Err(LinError::ModeIndex { index: i, n: self.n() })
        } else {
            Ok(())
        }
    }

    /// No other eigenvalue within `1e-7 * ||A||_F`.
    pub fn is_simple(&self, i: usize) -> bool {
        let tol = SIMPLE_MODE_RTOL * self.a_norm.max(f64::MIN_POSITIVE);
        let li = self.eigenvalues[i];
        self.eigenvalues
            .iter()
            .enumerate()
            .all(|(j, lj)| j == i || (li - lj).norm() > tol)
    }

    /// Index of the complex-conjugate partner, if the mode is oscillatory.
    pub fn conjugate_of(&self, i: usize) -> Option<usize> {
        let li = self.eigenvalues[i];
        if li.im == 0.0 {
            return None;
        }
        let target = li.conj();
        self.eigenvalues
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .min_by(|a, b| (a.1 - target).norm().total_cmp(&(b.1 - target).norm()))
            .map(|(j, _)| j)
    }

    /// `phi_i psi_i`, the residue of `(sI - A)^-1` at mode `i`.
    pub fn modal_projector(&self, i: usize) -> CMat {
        self.right(i) * self.psi.row(i)
    }

    pub fn biorthogonality_error(&self) -> f64 {
        let n = self.n();
        linalg::fro(&(&self.phi * &self.psi - CMat::identity(n, n)))
    }
}

/// Eigendecomposition of the state matrix of `ss`.
pub fn eigendecompose(ss: &StateSpace) -> Result<EigenSystem, LinError> {
    eigendecompose_matrix(ss.a())
}

/// Eigendecomposition of a real square matrix.
///
/// Eigenvalues come from the real Schur form; right eigenvectors from
/// shifted inverse iteration (block iteration for clusters), normalised to
/// unit 2-norm with the largest entry real and positive. Left eigenvectors
/// are the rows of `phi^-1`, and each eigenvalue is refined as
/// `psi_i A phi_i`. Ordering: real part descending, then imaginary part
/// descending, so conjugate pairs are adjacent with `+j` first.
pub fn eigendecompose_matrix(a: &DMatrix<f64>) -> Result<EigenSystem, LinError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinError::Dimension(format!("A is {}x{}", n, a.ncols())));
    }
    if n == 0 {
        return Err(LinError::Empty);
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(LinError::NonFinite);
    }
    let a_norm = linalg::fro_real(a);
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 100 * n.max(10))
        .ok_or(LinError::NoConvergence)?;
    let raw: Vec<Complex64> = schur.complex_eigenvalues().iter().cloned().collect();

    let tol = SIMPLE_MODE_RTOL * a_norm.max(f64::MIN_POSITIVE);
    let clusters = cluster(&raw, tol);
    let ac = linalg::to_complex(a);

    let mut pairs: Vec<(Complex64, CVec)> = Vec::with_capacity(n);
    for members in &clusters {
        let values: Vec<Complex64> = members.iter().map(|&k| raw[k]).collect();
        let all_upper = values.iter().all(|z| z.im > 0.0);
        let all_lower = values.iter().all(|z| z.im < 0.0);
        if all_lower {
            continue; // filled from the conjugate cluster
        }
        let center = values.iter().sum::<Complex64>() / values.len() as f64;
        let vecs = invariant_basis(&ac, center, values.len(), a_norm)?;
        let block = if values.len() == 1 {
            vec![(values[0], vecs.column(0).into_owned())]
        } else {
            split_degenerate_block(&ac, &vecs, a_norm)?
        };
        for (lam, mut v) in block {
            normalize_phase(&mut v);
            let real = !all_upper && values.iter().all(|z| z.im == 0.0);
            if real {
                v = v.map(|z| Complex64::new(z.re, 0.0));
                let nv = linalg::vec_norm(&v);
                v /= Complex64::new(nv, 0.0);
                pairs.push((Complex64::new(lam.re, 0.0), v));
            } else if all_upper {
                pairs.push((lam.conj(), v.map(|z| z.conj())));
                pairs.push((lam, v));
            } else {
                pairs.push((lam, v));
            }
        }
    }
    if pairs.len() != n {
        return Err(LinError::NonDiagonalizable(format!(
            "recovered {} of {n} eigenvectors",
            pairs.len()
        )));
    }

    pairs.sort_by(|x, y| y.0.re.total_cmp(&x.0.re).then(y.0.im.total_cmp(&x.0.im)));
    let mut phi = CMat::zeros(n, n);
    for (k, (_, v)) in pairs.iter().enumerate() {
        phi.set_column(k, v);
    }
    let rc = linalg::rcond(&phi);
    if rc < 1e-12 {
        return Err(LinError::NonDiagonalizable(format!(
            "eigenvector matrix condition number {:.3e}",
            1.0 / rc
        )));
    }
    let psi = linalg::inverse(&phi)
        .ok_or_else(|| LinError::NonDiagonalizable("singular eigenvector matrix".into()))?;

    // Rayleigh refinement with the biorthonormal pair.
    let mut eigenvalues: Vec<Complex64> = pairs.iter().map(|p| p.0).collect();
    let a_phi = &ac * &phi;
    for k in 0..n {
        let refined = (psi.row(k) * a_phi.column(k))[(0, 0)];
        eigenvalues[k] = if eigenvalues[k].im == 0.0 {
            Complex64::new(refined.re, 0.0)
        } else {
            refined
        };
    }
    // Keep conjugate pairs exactly conjugate.
    let mut k = 0;
    while k + 1 < n {
        if eigenvalues[k].im > 0.0 && pairs[k + 1].0 == pairs[k].0.conj() {
            eigenvalues[k + 1] = eigenvalues[k].conj();
            k += 2;
        } else {
            k += 1;
        }
    }

    let es = EigenSystem { eigenvalues, phi, psi, a_norm };
    let bio = es.biorthogonality_error();
    if bio > 1e-9 * n as f64 {
        return Err(LinError::NonDiagonalizable(format!("||phi psi - I||_F = {bio:.3e}")));
    }
    let lam = CMat::from_diagonal(&CVec::from_vec(es.eigenvalues.clone()));
    let resid = linalg::fro(&(&a_phi - &es.phi * lam));
    if resid > 1e-8 * a_norm.max(f64::MIN_POSITIVE) {
        return Err(LinError::NonDiagonalizable(format!("||A phi - phi Lambda||_F = {resid:.3e}")));
    }
    Ok(es)
}

/// Single-linkage grouping of eigenvalues closer than `tol`.
fn cluster(values: &[Complex64], tol: f64) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn root(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (values[i] - values[j]).norm() <= tol {
                let (ri, rj) = (root(&mut label, i), root(&mut label, j));
                if ri != rj {
                    label[rj] = ri;
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut index_of_root = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut label, i);
        if index_of_root[r] == usize::MAX {
            index_of_root[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[index_of_root[r]].push(i);
    }
    groups
}

/// Orthonormal basis of the invariant subspace belonging to `k` eigenvalues
/// near `center`, by shifted (block) inverse iteration.
fn invariant_basis(ac: &CMat, center: Complex64, k: usize, a_norm: f64) -> Result<CMat, LinError> {
    let n = ac.nrows();
    let bump = 1e-12 * a_norm.max(1.0);
    let shift = center + Complex64::new(bump, 0.7 * bump);
    let mut m = ac.clone();
    for i in 0..n {
        m[(i, i)] -= shift;
    }
    let lu = m.lu();
    let mut q = CMat::from_fn(n, k, |i, j| linalg::probe_vector(n, j + 1)[i]);
    for _ in 0..4 {
        let x = lu
            .solve(&q)
            .ok_or_else(|| LinError::NonDiagonalizable("singular shifted matrix".into()))?;
        q = x.qr().q();
        if q.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinError::NoConvergence);
        }
    }
    Ok(q)
}

/// Accept a cluster only if `A` restricted to its subspace is a multiple of
/// the identity up to tolerance (semisimple eigenvalue).
fn split_degenerate_block(
    ac: &CMat,
    basis: &CMat,
    a_norm: f64,
) -> Result<Vec<(Complex64, CVec)>, LinError> {
    let t = basis.adjoint() * ac * basis;
    let k = t.nrows();
    let mut off = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                off += t[(i, j)].norm_sqr();
            }
        }
    }
    if off.sqrt() > 1e-8 * a_norm.max(f64::MIN_POSITIVE) {
        return Err(LinError::NonDiagonalizable(format!(
            "cluster of {k} eigenvalues near {:.6e}{:+.6e}j couples with strength {:.3e}",
            t[(0, 0)].re,
            t[(0, 0)].im,
            off.sqrt()
        )));
    }
    Ok((0..k).map(|i| (t[(i, i)], basis.column(i).into_owned())).collect())
}

fn normalize_phase(v: &mut CVec) {
    let nv = linalg::vec_norm(v);
    let pivot = v
        .iter()
        .cloned()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    let rot = pivot.conj() / pivot.norm();
    for z in v.iter_mut() {
        *z = *z * rot / nv;
    }
}

/// Participation matrix: entry `(k, i) = phi_ki * psi_ik`.
pub fn participation_matrix(es: &EigenSystem) -> CMat {
    let n = es.n();
    CMat::from_fn(n, n, |k, i| es.phi[(k, i)] * es.psi[(i, k)])
}

/// `d lambda_i / dA = (phi_i psi_i)^T`.
pub fn eigen_sensitivity_to_a(es: &EigenSystem, i: usize) -> Result<CMat, LinError> {
    es.check_index(i)?;
    Ok(es.modal_projector(i).transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn diagonal_case() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0]));
        let es = eigendecompose_matrix(&a).unwrap();
        assert_eq!(es.eigenvalues(), &[c(-1.0, 0.0), c(-2.0, 0.0)]);
        assert!(linalg::fro(&(es.phi() - CMat::identity(2, 2))) < 1e-14);
        assert!(linalg::fro(&(es.psi() - CMat::identity(2, 2))) < 1e-14);
        let p = participation_matrix(&es);
        assert!(linalg::fro(&(p - CMat::identity(2, 2))) < 1e-14);
        let s = eigen_sensitivity_to_a(&es, 1).unwrap();
        assert!((s[(1, 1)] - c(1.0, 0.0)).norm() < 1e-14);
        assert!(s[(0, 0)].norm() + s[(0, 1)].norm() + s[(1, 0)].norm() < 1e-14);
    }

    #[test]
    fn companion_two_by_two() {
        // s^2 + 3s + 2 = (s+1)(s+2)
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let es = eigendecompose_matrix(&a).unwrap();
        assert!((es.eigenvalues()[0] - c(-1.0, 0.0)).norm() < 1e-12);
        assert!((es.eigenvalues()[1] - c(-2.0, 0.0)).norm() < 1e-12);
        // Phi = [[1,1],[-1,-2]] up to column scaling, Psi = Phi^-1 -> P_1 = [2, -1].
        let p = participation_matrix(&es);
        assert!((p[(0, 0)] - c(2.0, 0.0)).norm() < 1e-12);
        assert!((p[(1, 0)] - c(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn repeated_semisimple_accepted_but_not_simple() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-3.0, -3.0, -1.0]));
        let es = eigendecompose_matrix(&a).unwrap();
        assert!(es.is_simple(0));
        assert!(!es.is_simple(1));
        assert!(!es.is_simple(2));
    }

    #[test]
    fn jordan_block_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        assert!(matches!(eigendecompose_matrix(&a), Err(LinError::NonDiagonalizable(_))));
    }

    #[test]
    fn oscillator_pairs_are_conjugate() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 10.0, -10.0, -0.5]);
        let es = eigendecompose_matrix(&a).unwrap();
        let l = es.eigenvalues();
        assert!((l[0] - c(-0.5, 10.0)).norm() < 1e-12);
        assert_eq!(l[1], l[0].conj());
        assert_eq!(es.conjugate_of(0), Some(1));
        let s0 = eigen_sensitivity_to_a(&es, 0).unwrap();
        let s1 = eigen_sensitivity_to_a(&es, 1).unwrap();
        assert!(linalg::fro(&(s0.map(|z| z.conj()) - s1)) < 1e-13);
    }

    #[test]
    fn empty_and_bad_index() {
        assert_eq!(eigendecompose_matrix(&DMatrix::zeros(0, 0)).unwrap_err(), LinError::Empty);
        let es = eigendecompose_matrix(&DMatrix::from_element(1, 1, -1.0)).unwrap();
        assert!(matches!(eigen_sensitivity_to_a(&es, 3), Err(LinError::ModeIndex { .. })));
    }
}
