//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use gma_core::linalg::CMat;
use gma_core::lintf::StateSpace;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u: f64 = r.random_range(1e-12..1.0);
    let v: f64 = r.random_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gauss(r))
}

/// Random real matrix shifted so every eigenvalue has `Re < -0.1`.
pub fn random_stable(r: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = random_matrix(r, n, n) / (n as f64).sqrt();
    let eig = g.complex_eigenvalues();
    let max_re = eig.iter().map(|l| l.re).fold(f64::MIN, f64::max);
    let shift = max_re + 0.1 + r.random_range(0.0..1.0);
    g - DMatrix::identity(n, n) * shift
}

pub fn random_system(r: &mut ChaCha8Rng, n: usize, inputs: usize, outputs: usize) -> StateSpace {
    StateSpace::new(
        random_stable(r, n),
        random_matrix(r, n, inputs),
        random_matrix(r, outputs, n),
        DMatrix::zeros(outputs, inputs),
    )
    .unwrap()
}

/// Smallest distance from `lam` to another eigenvalue of `a`.
pub fn eigen_gap(a: &DMatrix<f64>, lam: Complex64) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|l| (l - lam).norm())
        .filter(|d| *d > 1e-9 * (1.0 + lam.norm()))
        .fold(f64::INFINITY, f64::min)
}

/// Residue of `(sI - A)^-1` at `lam` by the trapezoid rule on a circle of
/// radius `radius` around it. Exponentially accurate when the circle holds
/// only that pole.
pub fn contour_residue(a: &DMatrix<f64>, lam: Complex64, radius: f64, points: usize) -> CMat {
    let n = a.nrows();
    let ac = a.map(|x| Complex64::new(x, 0.0));
    let mut acc = CMat::zeros(n, n);
    for k in 0..points {
        let e = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / points as f64);
        let s = lam + e * radius;
        let m = CMat::identity(n, n) * s - &ac;
        let inv = m.try_inverse().expect("contour point is not a pole");
        acc += inv * (e * radius);
    }
    acc / Complex64::new(points as f64, 0.0)
}

/// Eigenvalue of `a` closest to `target`.
pub fn nearest_eigenvalue(a: &DMatrix<f64>, target: Complex64) -> Complex64 {
    a.complex_eigenvalues()
        .iter()
        .copied()
        .min_by(|x, y| (x - target).norm().partial_cmp(&(y - target).norm()).unwrap())
        .unwrap()
}
