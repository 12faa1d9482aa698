//! Small-signal dq-frame admittance models of power sources.
//!
//! Every template is a documented nonlinear model in the synchronous system
//! frame (rotating at `omega_base`), an equilibrium solver for a given
//! terminal operating point, and an analytic linearization. The linearized
//! model maps the terminal voltage perturbation to the current the device
//! draws from its bus, so the device admittance is `Y_G = -di_out/dv`.
//!
//! Conventions: `J = [[0, -1], [1, 0]]` (multiplication by `j`), per-unit
//! inductance `L` such that the reactance at `omega_base` is `omega_base L`,
//! per-unit capacitance likewise, time in seconds, angles in radians.

mod data;
mod gfl;
mod gfm;
mod sg;

pub use data::{admittance_from_samples, DataFitOptions};
pub use gfl::{gfl_admittance, GflDevice, GflGains, GflParams};
pub use gfm::{gfm_admittance, GfmDevice, GfmGains, GfmParams};
pub use sg::{sg_admittance, SgDevice, SgParams};

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, CMat};
use crate::lintf::{LinError, StateSpace};
use crate::vectorfit::FitError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("parameter `{name}` must be {rule}, got {value}")]
    Parameter { name: &'static str, rule: &'static str, value: f64 },
    #[error("operating point voltage must be positive, got {0}")]
    ZeroVoltage(f64),
    #[error("realization has a hidden unstable mode at {re:+.6e}{im:+.6e}j")]
    HiddenUnstable { re: f64, im: f64 },
    #[error("device transfer must be 2x2, got {0}x{1}")]
    NotDq(usize, usize),
    #[error("poor fit: relative RMS error {rms:.3e} above threshold {threshold:.3e}")]
    PoorFit { rms: f64, threshold: f64 },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Lin(#[from] LinError),
}

/// Per-unit base record carried with every device transfer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    pub s_base_mva: f64,
    pub v_base_kv: f64,
    pub omega_base: f64,
}

impl PerUnitBase {
    pub fn new(s_base_mva: f64, v_base_kv: f64, omega_base: f64) -> Self {
        Self { s_base_mva, v_base_kv, omega_base }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PortKind {
    /// Voltage in, current out.
    Admittance,
    /// Current in, voltage out.
    Impedance,
}

/// Terminal operating point: bus voltage `V∠theta` and the power `P + jQ`
/// the device delivers into the bus, all in per-unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v: f64,
    pub theta: f64,
    pub p: f64,
    pub q: f64,
}

impl OperatingPoint {
    pub fn new(v: f64, theta: f64, p: f64, q: f64) -> Result<Self, DeviceError> {
        let op = Self { v, theta, p, q };
        op.validate()?;
        Ok(op)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(self.v > 0.0) || !self.v.is_finite() {
            return Err(DeviceError::ZeroVoltage(self.v));
        }
        Ok(())
    }

    pub fn voltage(&self) -> Complex64 {
        Complex64::from_polar(self.v, self.theta)
    }

    /// Current delivered into the bus, `conj(S / V)`.
    pub fn current(&self) -> Complex64 {
        (Complex64::new(self.p, self.q) / self.voltage()).conj()
    }

    /// Same point with powers expressed on a base `scale` times larger.
    pub(crate) fn rebased(&self, scale: f64) -> Self {
        Self { p: self.p / scale, q: self.q / scale, ..*self }
    }
}

/// A 2x2 dq transfer matrix with its state-space realization.
#[derive(Debug, Clone)]
pub struct DqTransfer {
    realization: StateSpace,
    kind: PortKind,
    base: PerUnitBase,
}

impl DqTransfer {
    /// Wrap a 2-input, 2-output realization. Rejects hidden unstable modes.
    pub fn new(realization: StateSpace, kind: PortKind, base: PerUnitBase) -> Result<Self, DeviceError> {
        if realization.n_inputs() != 2 || realization.n_outputs() != 2 {
            return Err(DeviceError::NotDq(realization.n_outputs(), realization.n_inputs()));
        }
        check_stabilizable_detectable(&realization)?;
        Ok(Self { realization, kind, base })
    }

    pub fn realization(&self) -> &StateSpace {
        &self.realization
    }
    pub fn kind(&self) -> PortKind {
        self.kind
    }
    pub fn base(&self) -> PerUnitBase {
        self.base
    }

    /// The realized matrix at `s` (admittance or impedance per `kind`).
    pub fn eval(&self, s: Complex64) -> Result<CMat, DeviceError> {
        Ok(self.realization.eval(s)?)
    }

    pub fn admittance_at(&self, s: Complex64) -> Result<CMat, DeviceError> {
        let m = self.eval(s)?;
        match self.kind {
            PortKind::Admittance => Ok(m),
            PortKind::Impedance => invert2(&m, s),
        }
    }

    pub fn impedance_at(&self, s: Complex64) -> Result<CMat, DeviceError> {
        let m = self.eval(s)?;
        match self.kind {
            PortKind::Impedance => Ok(m),
            PortKind::Admittance => invert2(&m, s),
        }
    }

    /// Express a transfer measured in a local frame at angle `theta` in the
    /// system frame: `R(theta) M R(-theta)`.
    pub fn rotated(&self, theta: f64) -> Result<Self, DeviceError> {
        let r = rot(theta);
        let rt = rot(-theta);
        let ss = &self.realization;
        let b = ss.b() * to_dyn(&rt);
        let c = to_dyn(&r) * ss.c();
        let d = to_dyn(&r) * ss.d() * to_dyn(&rt);
        let out = StateSpace::new(ss.a().clone(), b, c, d)?.with_labels(
            ss.state_labels().to_vec(),
            ss.input_labels().to_vec(),
            ss.output_labels().to_vec(),
        )?;
        Self::new(out, self.kind, self.base)
    }
}

fn invert2(m: &CMat, s: Complex64) -> Result<CMat, DeviceError> {
    linalg::inverse(m).ok_or(DeviceError::Lin(LinError::AtPole { re: s.re, im: s.im }))
}

/// PBH test on every eigenvalue with positive real part.
fn check_stabilizable_detectable(ss: &StateSpace) -> Result<(), DeviceError> {
    let n = ss.n();
    if n == 0 {
        return Ok(());
    }
    let Some(schur) = nalgebra::Schur::try_new(ss.a().clone(), f64::EPSILON, 100 * n.max(10)) else {
        return Err(DeviceError::Lin(LinError::NoConvergence));
    };
    let scale = linalg::fro_real(ss.a()).max(1.0);
    for lam in schur.complex_eigenvalues().iter() {
        if lam.re <= 1e-6 * scale {
            continue;
        }
        let shifted = linalg::shifted(ss.a(), *lam);
        let bc = linalg::to_complex(ss.b());
        let cc = linalg::to_complex(ss.c());
        let mut ctrb = CMat::zeros(n, n + bc.ncols());
        ctrb.view_mut((0, 0), (n, n)).copy_from(&shifted);
        ctrb.view_mut((0, n), (n, bc.ncols())).copy_from(&bc);
        let mut obsv = CMat::zeros(n + cc.nrows(), n);
        obsv.view_mut((0, 0), (n, n)).copy_from(&shifted);
        obsv.view_mut((n, 0), (cc.nrows(), n)).copy_from(&cc);
        let min_sv = |m: CMat| m.singular_values().iter().cloned().fold(f64::INFINITY, f64::min);
        if min_sv(ctrb) < 1e-9 * scale || min_sv(obsv.adjoint()) < 1e-9 * scale {
            return Err(DeviceError::HiddenUnstable { re: lam.re, im: lam.im });
        }
    }
    Ok(())
}

/// Rotation by `a`: `[[cos, -sin], [sin, cos]]`.
pub(crate) fn rot(a: f64) -> Matrix2<f64> {
    let (s, c) = a.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Multiplication by `j` in dq coordinates.
pub(crate) fn jmat() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

pub(crate) fn to_dyn(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |i, j| m[(i, j)])
}

pub(crate) fn cvec(z: Complex64) -> Vector2<f64> {
    Vector2::new(z.re, z.im)
}

/// Analytic admittance of a series R-L branch in the synchronous frame,
/// `[[R + sL, -w L], [w L, R + sL]]^-1`.
pub fn rl_branch_admittance(r: f64, l: f64, omega_base: f64, s: Complex64) -> CMat {
    let z = CMat::from_row_slice(2, 2, &[
        s * l + r,
        Complex64::new(-omega_base * l, 0.0),
        Complex64::new(omega_base * l, 0.0),
        s * l + r,
    ]);
    linalg::inverse(&z).expect("R-L branch impedance is singular")
}

/// Block-matrix builder over 2-wide state groups.
pub(crate) struct Blocks {
    pub m: DMatrix<f64>,
}

impl Blocks {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { m: DMatrix::zeros(rows, cols) }
    }
    pub fn set(&mut self, r: usize, c: usize, block: &DMatrix<f64>) {
        self.m.view_mut((r, c), block.shape()).copy_from(block);
    }
    pub fn set2(&mut self, r: usize, c: usize, block: &Matrix2<f64>) {
        self.set(r, c, &to_dyn(block));
    }
    pub fn set_col(&mut self, r: usize, c: usize, v: &Vector2<f64>) {
        self.m[(r, c)] = v[0];
        self.m[(r + 1, c)] = v[1];
    }
    pub fn set_row(&mut self, r: usize, c: usize, v: &Vector2<f64>) {
        self.m[(r, c)] = v[0];
        self.m[(r, c + 1)] = v[1];
    }
}

/// Shared behaviour of the parametric templates: the nonlinear model used
/// for documentation and oracles, and its analytic linearization.
pub trait DeviceModel {
    fn state_labels(&self) -> Vec<String>;
    /// Equilibrium state at the configured operating point (device base).
    fn equilibrium(&self) -> DVector<f64>;
    /// Terminal voltage at the operating point, system frame.
    fn terminal_voltage(&self) -> Vector2<f64>;
    /// `dx/dt` of the nonlinear model for terminal voltage `v`.
    fn rhs(&self, x: &DVector<f64>, v: &Vector2<f64>) -> DVector<f64>;
    /// Current drawn from the bus (negative of the delivered current).
    fn drawn_current(&self, x: &DVector<f64>) -> Vector2<f64>;
    /// Analytic small-signal model: input `dv`, output drawn current.
    fn linearize(&self) -> StateSpace;
    /// Device rating (MVA) on which the model is expressed.
    fn rating(&self) -> f64;

    /// Admittance in the system base `base`.
    fn admittance(&self, base: PerUnitBase) -> Result<DqTransfer, DeviceError> {
        let ss = self.linearize().scaled(self.rating() / base.s_base_mva);
        DqTransfer::new(ss, PortKind::Admittance, base)
    }
}

pub(crate) fn dq_labels(prefix: &str) -> Vec<String> {
    vec![format!("{prefix}_d"), format!("{prefix}_q")]
}

pub(crate) fn labelled(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    states: Vec<String>,
) -> StateSpace {
    let d = DMatrix::zeros(2, 2);
    StateSpace::new(a, b, c, d)
        .and_then(|ss| ss.with_labels(states, dq_labels("v"), dq_labels("i")))
        .expect("device template dimensions are fixed")
}

pub(crate) fn positive(name: &'static str, value: f64) -> Result<(), DeviceError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DeviceError::Parameter { name, rule: "positive and finite", value })
    }
}

pub(crate) fn non_negative(name: &'static str, value: f64) -> Result<(), DeviceError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DeviceError::Parameter { name, rule: "non-negative and finite", value })
    }
}
