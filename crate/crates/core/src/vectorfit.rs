//! Rational approximation of sampled frequency responses.
//!
//! Matrix vector fitting with common poles: every element of the sampled
//! matrix shares one pole set. Each iteration solves a linear least-squares
//! problem for the element residues together with a scalar scaling function
//! `sigma(s) = d + sum c_n / (s - p_n)`; the zeros of `sigma` become the next
//! poles. `d` is left free (relaxed form) unless it collapses towards zero,
//! in which case the step is redone with `d = 1`. A final least-squares solve gives residues, constant and
//! (optionally) proportional terms. Conjugate pole pairs use the real
//! two-column basis, so every fit is conjugate-closed by construction.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{CMat, J};
use crate::lintf::{LinError, StateSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {need} distinct sample frequencies, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("samples contain non-finite values")]
    NonFinite,
    #[error("all samples must share one matrix shape")]
    ShapeMismatch,
    #[error("order must be >= 1 and iterations >= 1")]
    BadSettings,
    #[error("least-squares problem ill-conditioned (condition {cond:.3e} > {limit:.3e}) at iteration {iteration}")]
    IllConditioned { cond: f64, limit: f64, iteration: usize },
    #[error("poor fit: RMS error {rms:.3e} above threshold {threshold:.3e}")]
    PoorFit { rms: f64, threshold: f64, fit: Box<RationalFit> },
    #[error("no pole with frequency within {window_hz} Hz of {target_hz} Hz")]
    NoPoleInWindow { target_hz: f64, window_hz: f64 },
    #[error("fit has a proportional term and cannot be realized as a proper state-space model")]
    Improper,
    #[error("sample file line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Lin(#[from] LinError),
}

/// One frequency-response sample: angular frequency (rad/s) and the
/// complex matrix measured at `s = j omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub omega: f64,
    pub value: CMat,
}

impl Sample {
    pub fn new(omega: f64, value: CMat) -> Self {
        Self { omega, value }
    }
}

/// Read samples from CSV: `f_Hz`, then Re/Im of each matrix element in
/// row-major order. A non-numeric first row is taken as a header; `#`
/// starts a comment line.
pub fn read_samples_csv<R: std::io::Read>(reader: R) -> Result<Vec<Sample>, FitError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    let mut width = None;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FitError::Csv {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(k + 1, |p| p.line() as usize);
        if k == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| FitError::Csv { line, msg: e.to_string() })?;
        let m = match width {
            Some(w) if w != vals.len() => {
                return Err(FitError::Csv { line, msg: format!("expected {w} columns, got {}", vals.len()) })
            }
            Some(_) => ((vals.len() - 1) / 2).isqrt(),
            None => {
                let n = vals.len().saturating_sub(1) / 2;
                let m = n.isqrt();
                if vals.len() < 3 || vals.len() % 2 == 0 || m * m != n {
                    return Err(FitError::Csv {
                        line,
                        msg: format!("{} columns do not describe a square matrix", vals.len()),
                    });
                }
                width = Some(vals.len());
                m
            }
        };
        let value = CMat::from_fn(m, m, |i, j| Complex64::new(vals[1 + 2 * (i * m + j)], vals[2 + 2 * (i * m + j)]));
        out.push(Sample::new(2.0 * PI * vals[0], value));
    }
    Ok(out)
}

/// Inverse of [`read_samples_csv`], with a header row.
pub fn write_samples_csv(samples: &[Sample]) -> String {
    use crate::format::fmt_num;
    let (r, c) = samples.first().map_or((0, 0), |s| s.value.shape());
    let mut out = String::from("f_Hz");
    for i in 1..=r {
        for j in 1..=c {
            out.push_str(&format!(",re_{i}{j},im_{i}{j}"));
        }
    }
    out.push('\n');
    for s in samples {
        out.push_str(&fmt_num(s.omega / (2.0 * PI)));
        for i in 0..r {
            for j in 0..c {
                let z = s.value[(i, j)];
                out.push_str(&format!(",{},{}", fmt_num(z.re), fmt_num(z.im)));
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub order: usize,
    pub iterations: usize,
    pub enforce_stable: bool,
    /// Fit a constant (`D`) term.
    pub constant: bool,
    /// Fit a proportional (`s E`) term.
    pub linear: bool,
    /// Absolute RMS threshold; exceeding it is a `PoorFit` error.
    pub rms_threshold: Option<f64>,
    /// Largest accepted condition number of the column-scaled LS matrix.
    pub condition_limit: f64,
    /// Relative pole movement that counts as converged.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            order: 8,
            iterations: 10,
            enforce_stable: true,
            constant: true,
            linear: false,
            rms_threshold: None,
            condition_limit: 1e15,
            tolerance: 1e-8,
        }
    }
}

impl FitOptions {
    pub fn with_order(order: usize) -> Self {
        Self { order, ..Self::default() }
    }
}

/// Pole-residue model `sum_n R_n / (s - p_n) + D + s E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalFit {
    #[serde(with = "serde_cvec")]
    pub poles: Vec<Complex64>,
    #[serde(with = "serde_cmats")]
    pub residues: Vec<CMat>,
    #[serde(with = "serde_rmat")]
    pub constant: DMatrix<f64>,
    #[serde(with = "serde_rmat")]
    pub linear: DMatrix<f64>,
    pub rms_error: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl RationalFit {
    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn eval(&self, s: Complex64) -> CMat {
        let mut out = self.constant.map(|x| Complex64::new(x, 0.0)) + self.linear.map(|x| s * x);
        for (p, r) in self.poles.iter().zip(&self.residues) {
            out += r / (s - p);
        }
        out
    }

    /// RMS deviation from `samples`, computed the same way as during fitting.
    pub fn rms_against(&self, samples: &[Sample]) -> f64 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for smp in samples {
            let fit = self.eval(Complex64::new(0.0, smp.omega));
            acc += (fit - &smp.value).iter().map(|z| z.norm_sqr()).sum::<f64>();
            count += smp.value.len();
        }
        (acc / count.max(1) as f64).sqrt()
    }

    /// Real block-diagonal realization; pairs become `[[a, b], [-b, a]]`
    /// blocks with `B = [2I; 0]`, `C = [Re R, Im R]`.
    pub fn to_state_space(&self) -> Result<StateSpace, FitError> {
        if self.linear.iter().any(|x| *x != 0.0) {
            return Err(FitError::Improper);
        }
        let (rows, cols) = self.shape();
        let groups = group_poles(&self.poles);
        let n: usize = groups.iter().map(|g| g.width() * cols).sum();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, cols);
        let mut c = DMatrix::zeros(rows, n);
        let mut at = 0;
        for g in &groups {
            let k = self.poles.iter().position(|p| *p == g.pole()).expect("pole from this fit");
            let r = &self.residues[k];
            match g {
                PoleGroup::Real(p) => {
                    for q in 0..cols {
                        a[(at + q, at + q)] = *p;
                        b[(at + q, q)] = 1.0;
                        for i in 0..rows {
                            c[(i, at + q)] = r[(i, q)].re;
                        }
                    }
                    at += cols;
                }
                PoleGroup::Pair(p) => {
                    for q in 0..cols {
                        let (x, y) = (at + q, at + cols + q);
                        a[(x, x)] = p.re;
                        a[(x, y)] = p.im;
                        a[(y, x)] = -p.im;
                        a[(y, y)] = p.re;
                        b[(x, q)] = 2.0;
                        for i in 0..rows {
                            c[(i, x)] = r[(i, q)].re;
                            c[(i, y)] = r[(i, q)].im;
                        }
                    }
                    at += 2 * cols;
                }
            }
        }
        Ok(StateSpace::new(a, b, c, self.constant.clone())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PoleGroup {
    Real(f64),
    /// Upper member of a conjugate pair.
    Pair(Complex64),
}

impl PoleGroup {
    fn width(&self) -> usize {
        match self {
            PoleGroup::Real(_) => 1,
            PoleGroup::Pair(_) => 2,
        }
    }
    fn pole(&self) -> Complex64 {
        match self {
            PoleGroup::Real(p) => Complex64::new(*p, 0.0),
            PoleGroup::Pair(p) => *p,
        }
    }
    /// Real-basis columns at `s`.
    fn basis(&self, s: Complex64, out: &mut Vec<Complex64>) {
        match self {
            PoleGroup::Real(p) => out.push(1.0 / (s - *p)),
            PoleGroup::Pair(p) => {
                let a = 1.0 / (s - *p);
                let b = 1.0 / (s - p.conj());
                out.push(a + b);
                out.push(J * a - J * b);
            }
        }
    }
}

fn group_poles(poles: &[Complex64]) -> Vec<PoleGroup> {
    poles
        .iter()
        .filter(|p| p.im >= 0.0)
        .map(|p| if p.im == 0.0 { PoleGroup::Real(p.re) } else { PoleGroup::Pair(*p) })
        .collect()
}

fn expand(groups: &[PoleGroup]) -> Vec<Complex64> {
    let mut out = Vec::new();
    for g in groups {
        match g {
            PoleGroup::Real(p) => out.push(Complex64::new(*p, 0.0)),
            PoleGroup::Pair(p) => {
                out.push(*p);
                out.push(p.conj());
            }
        }
    }
    out
}

/// Complex conjugate starting pairs with log-spaced imaginary parts over
/// the sample band and real parts `-imag/100`; an odd order adds one real
/// pole at the geometric band centre.
fn initial_poles(order: usize, w_min: f64, w_max: f64) -> Vec<PoleGroup> {
    let pairs = order / 2;
    let mut out = Vec::with_capacity(pairs + 1);
    for k in 0..pairs {
        let frac = if pairs == 1 { 0.5 } else { k as f64 / (pairs - 1) as f64 };
        let w = (w_min.ln() + frac * (w_max.ln() - w_min.ln())).exp();
        out.push(PoleGroup::Pair(Complex64::new(-w / 100.0, w)));
    }
    if order % 2 == 1 {
        out.push(PoleGroup::Real(-(w_min * w_max).sqrt()));
    }
    out
}

/// Least squares with column scaling; returns the solution and the
/// condition number of the scaled matrix.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let scales: Vec<f64> = (0..a.ncols())
        .map(|j| {
            let n = a.column(j).norm();
            if n > 0.0 { n } else { 1.0 }
        })
        .collect();
    let mut scaled = a.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = scaled.svd(true, true);
    let sv = &svd.singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    let x = svd.solve(b, max * 1e-15).expect("SVD computed with U and V");
    let x = DVector::from_iterator(x.len(), x.iter().zip(&scales).map(|(v, s)| v / s));
    (x, cond)
}

fn validate(samples: &[Sample], need: usize) -> Result<(usize, usize), FitError> {
    let shape = samples.first().map(|s| s.value.shape()).ok_or(FitError::TooFewSamples { need, got: 0 })?;
    for s in samples {
        if s.value.shape() != shape {
            return Err(FitError::ShapeMismatch);
        }
        if !s.omega.is_finite() || s.value.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(FitError::NonFinite);
        }
    }
    let mut w: Vec<f64> = samples.iter().map(|s| s.omega).collect();
    w.sort_by(f64::total_cmp);
    w.dedup();
    if w.len() < need {
        return Err(FitError::TooFewSamples { need, got: w.len() });
    }
    Ok(shape)
}

/// Fit a common-pole rational model to matrix frequency-response samples.
pub fn vector_fit(samples: &[Sample], opts: &FitOptions) -> Result<RationalFit, FitError> {
    if opts.order == 0 || opts.iterations == 0 {
        return Err(FitError::BadSettings);
    }
    let (rows, cols) = validate(samples, 2 * opts.order)?;
    let w_pos: Vec<f64> = samples.iter().map(|s| s.omega.abs()).filter(|w| *w > 0.0).collect();
    let w_min = w_pos.iter().cloned().fold(f64::INFINITY, f64::min);
    let w_max = w_pos.iter().cloned().fold(0.0, f64::max);
    let mut groups = initial_poles(opts.order, w_min, w_max.max(w_min * 1.0001));

    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.iterations {
        iterations = it + 1;
        let (c, d) = match identify(samples, &groups, rows, cols, opts, true, it)? {
            (c, d) if d.abs() > 1e-8 => (c, d),
            _ => identify(samples, &groups, rows, cols, opts, false, it)?,
        };
        let new_groups = relocate(&groups, &(c / d), opts.enforce_stable)?;
        let moved = pole_movement(&groups, &new_groups);
        groups = new_groups;
        if moved < opts.tolerance {
            converged = true;
            break;
        }
    }

    let fit = residue_solve(samples, &groups, rows, cols, opts, converged, iterations)?;
    if let Some(threshold) = opts.rms_threshold {
        if fit.rms_error > threshold {
            return Err(FitError::PoorFit { rms: fit.rms_error, threshold, fit: Box::new(fit) });
        }
    }
    Ok(fit)
}

/// One pole-identification solve. Returns the scaling-function residues and
/// its constant term. The relaxed form leaves the constant free and pins the
/// mean of `Re sigma` over the samples to one instead.
fn identify(
    samples: &[Sample],
    groups: &[PoleGroup],
    rows: usize,
    cols: usize,
    opts: &FitOptions,
    relaxed: bool,
    iteration: usize,
) -> Result<(DVector<f64>, f64), FitError> {
    let nel = rows * cols;
    let k = samples.len();
    let n: usize = groups.iter().map(|g| g.width()).sum();
    let n_off = opts.constant as usize + opts.linear as usize;
    let per_el = n + n_off;
    let ns = n + relaxed as usize;
    let extra = relaxed as usize;
    let mut a = DMatrix::zeros(2 * k * nel + extra, nel * per_el + ns);
    let mut rhs = DVector::zeros(2 * k * nel + extra);
    let mut phi = Vec::with_capacity(n);
    let mut phi_sum = vec![0.0; n];
    let mut f_norm = 0.0;
    for (ks, smp) in samples.iter().enumerate() {
        let s = Complex64::new(0.0, smp.omega);
        phi.clear();
        for g in groups {
            g.basis(s, &mut phi);
        }
        for (acc, b) in phi_sum.iter_mut().zip(&phi) {
            *acc += b.re;
        }
        for e in 0..nel {
            let f = smp.value[(e / cols, e % cols)];
            f_norm += f.norm_sqr();
            let row = 2 * (ks * nel + e);
            let c0 = e * per_el;
            let mut put = |col: usize, v: Complex64| {
                a[(row, col)] = v.re;
                a[(row + 1, col)] = v.im;
            };
            for (q, b) in phi.iter().enumerate() {
                put(c0 + q, *b);
                put(nel * per_el + q, -f * b);
            }
            let mut off = c0 + n;
            if opts.constant {
                put(off, Complex64::new(1.0, 0.0));
                off += 1;
            }
            if opts.linear {
                put(off, s);
            }
            if relaxed {
                put(nel * per_el + n, -f);
            } else {
                rhs[row] = f.re;
                rhs[row + 1] = f.im;
            }
        }
    }
    if relaxed {
        let row = 2 * k * nel;
        let scale = f_norm.sqrt() / k as f64;
        for (q, v) in phi_sum.iter().enumerate() {
            a[(row, nel * per_el + q)] = scale * v;
        }
        a[(row, nel * per_el + n)] = scale * k as f64;
        rhs[row] = scale * k as f64;
    }
    let (x, cond) = lstsq(&a, &rhs);
    if !(cond <= opts.condition_limit) {
        return Err(FitError::IllConditioned { cond, limit: opts.condition_limit, iteration });
    }
    let c = x.rows(nel * per_el, n).into_owned();
    let d = if relaxed { x[nel * per_el + n] } else { 1.0 };
    Ok((c, d))
}

/// Zeros of `sigma(s)`: eigenvalues of `A - b c^T`.
fn relocate(groups: &[PoleGroup], c: &DVector<f64>, enforce_stable: bool) -> Result<Vec<PoleGroup>, FitError> {
    let n = c.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    let mut at = 0;
    for g in groups {
        match g {
            PoleGroup::Real(p) => {
                a[(at, at)] = *p;
                b[at] = 1.0;
                at += 1;
            }
            PoleGroup::Pair(p) => {
                a[(at, at)] = p.re;
                a[(at, at + 1)] = p.im;
                a[(at + 1, at)] = -p.im;
                a[(at + 1, at + 1)] = p.re;
                b[at] = 2.0;
                at += 2;
            }
        }
    }
    let h = a - &b * c.transpose();
    let schur = Schur::try_new(h, f64::EPSILON, 1000 * n.max(1)).ok_or(LinError::NoConvergence)?;
    let mut zeros: Vec<Complex64> = schur.complex_eigenvalues().iter().cloned().collect();
    if enforce_stable {
        for z in zeros.iter_mut() {
            if z.re > 0.0 {
                z.re = -z.re;
            }
        }
    }
    let mut out: Vec<PoleGroup> = zeros
        .iter()
        .filter(|z| z.im >= 0.0)
        .map(|z| if z.im == 0.0 { PoleGroup::Real(z.re) } else { PoleGroup::Pair(*z) })
        .collect();
    out.sort_by(|x, y| x.pole().im.total_cmp(&y.pole().im).then(x.pole().re.total_cmp(&y.pole().re)));
    Ok(out)
}

fn pole_movement(old: &[PoleGroup], new: &[PoleGroup]) -> f64 {
    let a = expand(old);
    let b = expand(new);
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for p in &b {
        let d = a.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min);
        worst = worst.max(d / p.norm().max(f64::MIN_POSITIVE));
    }
    worst
}

fn residue_solve(
    samples: &[Sample],
    groups: &[PoleGroup],
    rows: usize,
    cols: usize,
    opts: &FitOptions,
    converged: bool,
    iterations: usize,
) -> Result<RationalFit, FitError> {
    let n: usize = groups.iter().map(|g| g.width()).sum();
    let n_off = opts.constant as usize + opts.linear as usize;
    let k = samples.len();
    let mut a = DMatrix::zeros(2 * k, n + n_off);
    let mut phi = Vec::with_capacity(n);
    for (ks, smp) in samples.iter().enumerate() {
        let s = Complex64::new(0.0, smp.omega);
        phi.clear();
        for g in groups {
            g.basis(s, &mut phi);
        }
        let mut put = |col: usize, v: Complex64| {
            a[(2 * ks, col)] = v.re;
            a[(2 * ks + 1, col)] = v.im;
        };
        for (q, b) in phi.iter().enumerate() {
            put(q, *b);
        }
        let mut off = n;
        if opts.constant {
            put(off, Complex64::new(1.0, 0.0));
            off += 1;
        }
        if opts.linear {
            put(off, s);
        }
    }
    let poles = expand(groups);
    let mut residues = vec![CMat::zeros(rows, cols); poles.len()];
    let mut constant = DMatrix::zeros(rows, cols);
    let mut linear = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let rhs = DVector::from_fn(2 * k, |r, _| {
                let z = samples[r / 2].value[(i, j)];
                if r % 2 == 0 { z.re } else { z.im }
            });
            let (x, cond) = lstsq(&a, &rhs);
            if !(cond <= opts.condition_limit) {
                return Err(FitError::IllConditioned { cond, limit: opts.condition_limit, iteration: iterations });
            }
            let mut col = 0;
            let mut pi = 0;
            for g in groups {
                match g {
                    PoleGroup::Real(_) => {
                        residues[pi][(i, j)] = Complex64::new(x[col], 0.0);
                        col += 1;
                        pi += 1;
                    }
                    PoleGroup::Pair(_) => {
                        let r = Complex64::new(x[col], x[col + 1]);
                        residues[pi][(i, j)] = r;
                        residues[pi + 1][(i, j)] = r.conj();
                        col += 2;
                        pi += 2;
                    }
                }
            }
            if opts.constant {
                constant[(i, j)] = x[col];
                col += 1;
            }
            if opts.linear {
                linear[(i, j)] = x[col];
            }
        }
    }
    let mut fit = RationalFit { poles, residues, constant, linear, rms_error: 0.0, converged, iterations };
    fit.rms_error = fit.rms_against(samples);
    Ok(fit)
}

/// A pole picked out of a fit, with its residue matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeData {
    pub pole: Complex64,
    pub sigma: f64,
    pub residue: CMat,
}

/// Pole whose frequency is closest to `target_hz` within `window_hz`; ties
/// go to the smaller `|sigma|`.
pub fn extract_mode_data(fit: &RationalFit, target_hz: f64, window_hz: f64) -> Result<ModeData, FitError> {
    let target = 2.0 * PI * target_hz;
    let window = 2.0 * PI * window_hz;
    let best = fit
        .poles
        .iter()
        .enumerate()
        .filter(|(_, p)| p.im > 0.0 && (p.im - target).abs() <= window)
        .min_by(|(_, a), (_, b)| {
            let da = (a.im - target).abs();
            let db = (b.im - target).abs();
            if (da - db).abs() <= 1e-12 * target.abs().max(1.0) {
                a.re.abs().total_cmp(&b.re.abs())
            } else {
                da.total_cmp(&db)
            }
        });
    match best {
        Some((k, p)) => Ok(ModeData { pole: *p, sigma: p.re, residue: fit.residues[k].clone() }),
        None => Err(FitError::NoPoleInWindow { target_hz, window_hz }),
    }
}

mod serde_cvec {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let v: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

mod serde_cmats {
    use nalgebra::DMatrix;
    use num_complex::Complex64;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    type Rows = Vec<Vec<[f64; 2]>>;

    pub fn serialize<S: Serializer>(v: &[DMatrix<Complex64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|m| (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect())
            .collect::<Vec<Rows>>()
            .serialize(s)
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<Complex64>>, D::Error> {
        let v: Vec<Rows> = Vec::deserialize(d)?;
        v.into_iter()
            .map(|rows| {
                let r = rows.len();
                let c = rows.first().map_or(0, |x| x.len());
                if rows.iter().any(|x| x.len() != c) {
                    return Err(D::Error::custom("ragged residue matrix"));
                }
                Ok(DMatrix::from_fn(r, c, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])))
            })
            .collect()
    }
}

mod serde_rmat {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>())
            .collect::<Vec<_>>()
            .serialize(s)
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(D::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
    }
}
