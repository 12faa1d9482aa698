//! Small dense helpers shared by the analysis modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn fro(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn fro_real(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn vec_norm(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `s I - A` for a real `A`.
pub fn shifted(a: &DMatrix<f64>, s: Complex64) -> CMat {
    let n = a.nrows();
    let mut m = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = Complex64::new(-a[(i, j)], 0.0);
        }
        m[(i, i)] += s;
    }
    m
}

/// Solve `M X = B` with partial-pivot LU. `None` when a pivot is exactly zero.
pub fn solve(m: &CMat, b: &CMat) -> Option<CMat> {
    let lu = m.clone().lu();
    lu.solve(b)
}

pub fn inverse(m: &CMat) -> Option<CMat> {
    m.clone().try_inverse()
}

/// Smallest-to-largest singular value ratio.
pub fn rcond(m: &CMat) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Determinant via LU (nalgebra's `determinant` is fine for the sizes here).
pub fn det(m: &CMat) -> Complex64 {
    m.clone().lu().determinant()
}

/// `|det M|` divided by the product of column 2-norms. Always in `[0, 1]`
/// (Hadamard), so it measures singularity independently of scaling.
pub fn hadamard_ratio(m: &CMat) -> f64 {
    let mut log_cols = 0.0;
    for c in 0..m.ncols() {
        let n = m.column(c).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n == 0.0 {
            return 0.0;
        }
        log_cols += n.ln();
    }
    let lu = m.clone().lu();
    let u = lu.u();
    let mut log_det = 0.0;
    for i in 0..u.nrows() {
        let p = u[(i, i)].norm();
        if p == 0.0 {
            return 0.0;
        }
        log_det += p.ln();
    }
    (log_det - log_cols).exp()
}

/// Copy a 2x2 block out of a block matrix.
pub fn block2(m: &CMat, bi: usize, bj: usize) -> CMat {
    m.view((2 * bi, 2 * bj), (2, 2)).into_owned()
}

/// Deterministic, well-spread start vector for inverse iteration.
pub fn probe_vector(n: usize, seed: usize) -> CVec {
    CVec::from_fn(n, |i, _| {
        let t = (i as f64 + 1.0) * (0.618_033_988_749_895 + seed as f64 * 0.754_877_666);
        Complex64::new((t * 7.3).sin() + 1.1, (t * 3.1).cos() * 0.5)
    })
}
