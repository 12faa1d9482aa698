//! Grid-following converter: SRF-PLL, PI current control in the PLL frame,
//! L filter.
//!
//! States `[delta, x_pll, zeta_d, zeta_q, i_d, i_q]`:
//!
//! ```text
//! v_p   = R(-delta) v                 i_p = R(-delta) i
//! delta' = kp_pll v_p,q + x_pll       x_pll' = ki_pll v_p,q
//! e      = i_ref - i_p                zeta'  = e
//! vc     = R(delta) (v_ff + kp e + ki zeta)
//! L i'   = vc - v - R i - w L J i
//! ```
//!
//! `i` is the current delivered into the bus, in the system frame; `i_ref`
//! and `v_ff` are the equilibrium current and converter voltage in the PLL
//! frame, so every integrator rests at zero.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{
    cvec, dq_labels, jmat, labelled, non_negative, positive, rot, Blocks, DeviceError, DeviceModel,
    DqTransfer, OperatingPoint, PerUnitBase,
};
use crate::lintf::StateSpace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GflParams {
    /// PLL proportional gain, rad/s per p.u. voltage.
    pub pll_kp: f64,
    /// PLL integral gain, rad/s^2 per p.u. voltage.
    pub pll_ki: f64,
    /// Closed current-loop bandwidth, Hz.
    pub current_bw_hz: f64,
    /// Filter inductance, p.u. (reactance `omega_base * l`).
    pub l: f64,
    /// Filter resistance, p.u.
    pub r: f64,
    /// Rating in MVA; parameters above are on this base.
    pub rating_mva: f64,
}

impl Default for GflParams {
    fn default() -> Self {
        Self {
            pll_kp: 30.0,
            pll_ki: 900.0,
            current_bw_hz: 400.0,
            l: 0.15 / (2.0 * std::f64::consts::PI * 50.0),
            r: 0.01,
            rating_mva: 100.0,
        }
    }
}

impl GflParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        non_negative("pll_kp", self.pll_kp)?;
        non_negative("pll_ki", self.pll_ki)?;
        positive("current_bw_hz", self.current_bw_hz)?;
        positive("l", self.l)?;
        non_negative("r", self.r)?;
        positive("rating_mva", self.rating_mva)
    }

    /// Pole placement on the filter: `kp = 2 pi f L`, `ki = 2 pi f R`.
    pub fn gains(&self) -> GflGains {
        let wc = 2.0 * std::f64::consts::PI * self.current_bw_hz;
        GflGains { pll_kp: self.pll_kp, pll_ki: self.pll_ki, current_kp: wc * self.l, current_ki: wc * self.r }
    }
}

/// Controller gains actually used by the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GflGains {
    pub pll_kp: f64,
    pub pll_ki: f64,
    pub current_kp: f64,
    pub current_ki: f64,
}

impl GflGains {
    pub fn zero() -> Self {
        Self { pll_kp: 0.0, pll_ki: 0.0, current_kp: 0.0, current_ki: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct GflDevice {
    params: GflParams,
    gains: GflGains,
    omega_base: f64,
    delta0: f64,
    v0: Vector2<f64>,
    i0: Vector2<f64>,
    vc0: Vector2<f64>,
    i_ref: Vector2<f64>,
    v_ff: Vector2<f64>,
}

impl GflDevice {
    /// `op` is in device per-unit.
    pub fn new(params: GflParams, op: OperatingPoint, omega_base: f64) -> Result<Self, DeviceError> {
        params.validate()?;
        Self::with_gains(params, params.gains(), op, omega_base)
    }

    pub fn with_gains(
        params: GflParams,
        gains: GflGains,
        op: OperatingPoint,
        omega_base: f64,
    ) -> Result<Self, DeviceError> {
        op.validate()?;
        positive("omega_base", omega_base)?;
        let v = op.voltage();
        let i = op.current();
        let vc = v + crate::linalg::J * (omega_base * params.l) * i + i * params.r;
        let delta0 = op.theta;
        let to_pll = rot(-delta0);
        Ok(Self {
            params,
            gains,
            omega_base,
            delta0,
            v0: cvec(v),
            i0: cvec(i),
            vc0: cvec(vc),
            i_ref: to_pll * cvec(i),
            v_ff: to_pll * cvec(vc),
        })
    }

    pub fn params(&self) -> &GflParams {
        &self.params
    }
    pub fn gains(&self) -> &GflGains {
        &self.gains
    }
}

impl DeviceModel for GflDevice {
    fn state_labels(&self) -> Vec<String> {
        let mut v = vec!["pll_angle".to_string(), "pll_integrator".to_string()];
        v.extend(dq_labels("cc_integrator"));
        v.extend(dq_labels("i_filter"));
        v
    }

    fn equilibrium(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.delta0, 0.0, 0.0, 0.0, self.i0[0], self.i0[1]])
    }

    fn terminal_voltage(&self) -> Vector2<f64> {
        self.v0
    }

    fn rhs(&self, x: &DVector<f64>, v: &Vector2<f64>) -> DVector<f64> {
        let g = &self.gains;
        let p = &self.params;
        let w = self.omega_base;
        let delta = x[0];
        let zeta = Vector2::new(x[2], x[3]);
        let i = Vector2::new(x[4], x[5]);
        let vp = rot(-delta) * v;
        let ip = rot(-delta) * i;
        let e = self.i_ref - ip;
        let vc = rot(delta) * (self.v_ff + e * g.current_kp + zeta * g.current_ki);
        let di = (vc - v - i * p.r - jmat() * i * (w * p.l)) / p.l;
        DVector::from_vec(vec![g.pll_kp * vp[1] + x[1], g.pll_ki * vp[1], e[0], e[1], di[0], di[1]])
    }

    fn drawn_current(&self, x: &DVector<f64>) -> Vector2<f64> {
        -Vector2::new(x[4], x[5])
    }

    fn linearize(&self) -> StateSpace {
        let g = &self.gains;
        let p = &self.params;
        let w = self.omega_base;
        let j = jmat();
        let to_pll = rot(-self.delta0);
        let from_pll = rot(self.delta0);
        let vp0 = to_pll * self.v0;
        let ip0 = to_pll * self.i0;
        let eq = Vector2::new(0.0, 1.0);

        let mut a = Blocks::zeros(6, 6);
        let mut b = Blocks::zeros(6, 2);
        // d v_p / d delta = -J v_p0
        let dvq_ddelta = eq.dot(&(-(j * vp0)));
        let dvq_dv = (eq.transpose() * to_pll).transpose();
        a.m[(0, 0)] = g.pll_kp * dvq_ddelta;
        a.m[(0, 1)] = 1.0;
        b.set_row(0, 0, &(dvq_dv * g.pll_kp));
        a.m[(1, 0)] = g.pll_ki * dvq_ddelta;
        b.set_row(1, 0, &(dvq_dv * g.pll_ki));
        // zeta' = -d i_p = J i_p0 d delta - R(-delta0) d i
        a.set_col(2, 0, &(j * ip0));
        a.set2(2, 4, &(-to_pll));
        // L i' = J vc0 d delta + R(delta0)(kp de + ki dzeta) - dv - R di - wLJ di
        let di_ddelta = (j * self.vc0 + from_pll * (j * ip0) * g.current_kp) / p.l;
        a.set_col(4, 0, &di_ddelta);
        a.set2(4, 2, &(from_pll * (g.current_ki / p.l)));
        let a_ii = (Matrix2::identity() * (-(g.current_kp + p.r)) - j * (w * p.l)) / p.l;
        a.set2(4, 4, &a_ii);
        b.set2(4, 0, &(Matrix2::identity() * (-1.0 / p.l)));

        let mut c = DMatrix::zeros(2, 6);
        c[(0, 4)] = -1.0;
        c[(1, 5)] = -1.0;
        labelled(a.m, b.m, c, self.state_labels())
    }

    fn rating(&self) -> f64 {
        self.params.rating_mva
    }
}

/// Grid-following admittance in the system base. `op` powers are in system
/// per-unit.
pub fn gfl_admittance(p: &GflParams, op: &OperatingPoint, base: PerUnitBase) -> Result<DqTransfer, DeviceError> {
    let op_dev = op.rebased(p.rating_mva / base.s_base_mva);
    GflDevice::new(*p, op_dev, base.omega_base)?.admittance(base)
}
