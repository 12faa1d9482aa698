//! Grid-forming converter: P-f droop with a low-pass power measurement,
//! cascaded PI voltage and current loops in the droop frame, LC filter and
//! a coupling inductor to the bus.
//!
//! States `[theta, p_f, xi_v(2), xi_i(2), i_f(2), v_o(2), i_o(2)]`:
//!
//! ```text
//! theta' = w_b m (P_set - p_f)          p_f' = w_pf (v_o . i_o - p_f)
//! e_v = (V_set, 0) - R(-theta) v_o      xi_v' = e_v
//! i_ref = i_ff + kpv e_v + kiv xi_v
//! e_i = i_ref - R(-theta) i_f           xi_i' = e_i
//! v_inv = R(theta) (v_ff + kpc e_i + kic xi_i)
//! Lf i_f' = v_inv - v_o - Rf i_f - w Lf J i_f
//! Cf v_o' = i_f - i_o - w Cf J v_o
//! Lc i_o' = v_o - v - Rc i_o - w Lc J i_o
//! ```
//!
//! `V_set`, `P_set`, `i_ff` and `v_ff` are solved from the operating point.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    cvec, dq_labels, jmat, labelled, non_negative, positive, rot, Blocks, DeviceError, DeviceModel,
    DqTransfer, OperatingPoint, PerUnitBase,
};
use crate::linalg::J;
use crate::lintf::StateSpace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GfmParams {
    /// Frequency droop, p.u. frequency per p.u. power.
    pub droop: f64,
    /// Power-measurement low-pass cutoff, Hz.
    pub power_filter_hz: f64,
    /// Closed voltage-loop bandwidth, Hz.
    pub voltage_bw_hz: f64,
    /// Closed current-loop bandwidth, Hz.
    pub current_bw_hz: f64,
    pub lf: f64,
    pub rf: f64,
    pub cf: f64,
    pub lc: f64,
    pub rc: f64,
    pub rating_mva: f64,
}

impl Default for GfmParams {
    fn default() -> Self {
        let w = 2.0 * PI * 50.0;
        Self {
            droop: 0.02,
            power_filter_hz: 5.0,
            voltage_bw_hz: 300.0,
            current_bw_hz: 1000.0,
            lf: 0.10 / w,
            rf: 0.01,
            cf: 0.05 / w,
            lc: 0.10 / w,
            rc: 0.01,
            rating_mva: 100.0,
        }
    }
}

impl GfmParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        non_negative("droop", self.droop)?;
        positive("power_filter_hz", self.power_filter_hz)?;
        positive("voltage_bw_hz", self.voltage_bw_hz)?;
        positive("current_bw_hz", self.current_bw_hz)?;
        positive("lf", self.lf)?;
        non_negative("rf", self.rf)?;
        positive("cf", self.cf)?;
        positive("lc", self.lc)?;
        non_negative("rc", self.rc)?;
        positive("rating_mva", self.rating_mva)
    }

    /// Current loop: `kpc = 2 pi f Lf`, `kic = 2 pi f Rf`. Voltage loop:
    /// `kpv = 2 pi f Cf` with the integral corner a tenth of the bandwidth.
    pub fn gains(&self) -> GfmGains {
        let wc = 2.0 * PI * self.current_bw_hz;
        let wv = 2.0 * PI * self.voltage_bw_hz;
        let kpv = wv * self.cf;
        GfmGains {
            droop: self.droop,
            power_filter: 2.0 * PI * self.power_filter_hz,
            voltage_kp: kpv,
            voltage_ki: kpv * wv / 10.0,
            current_kp: wc * self.lf,
            current_ki: wc * self.rf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfmGains {
    pub droop: f64,
    /// rad/s
    pub power_filter: f64,
    pub voltage_kp: f64,
    pub voltage_ki: f64,
    pub current_kp: f64,
    pub current_ki: f64,
}

impl GfmGains {
    /// All control action removed; the power filter keeps its pole.
    pub fn zero(power_filter: f64) -> Self {
        Self { droop: 0.0, power_filter, voltage_kp: 0.0, voltage_ki: 0.0, current_kp: 0.0, current_ki: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct GfmDevice {
    params: GfmParams,
    gains: GfmGains,
    omega_base: f64,
    theta0: f64,
    v0: Vector2<f64>,
    if0: Vector2<f64>,
    vo0: Vector2<f64>,
    io0: Vector2<f64>,
    vinv0: Vector2<f64>,
    v_set: f64,
    p_set: f64,
    i_ff: Vector2<f64>,
    v_ff: Vector2<f64>,
}

impl GfmDevice {
    pub fn new(params: GfmParams, op: OperatingPoint, omega_base: f64) -> Result<Self, DeviceError> {
        params.validate()?;
        Self::with_gains(params, params.gains(), op, omega_base)
    }

    pub fn with_gains(
        params: GfmParams,
        gains: GfmGains,
        op: OperatingPoint,
        omega_base: f64,
    ) -> Result<Self, DeviceError> {
        op.validate()?;
        positive("omega_base", omega_base)?;
        let w = omega_base;
        let v = op.voltage();
        let io = op.current();
        let vo = v + io * Complex64::new(params.rc, w * params.lc);
        let i_f = io + J * (w * params.cf) * vo;
        let vinv = vo + i_f * Complex64::new(params.rf, w * params.lf);
        let theta0 = vo.arg();
        let to_local = rot(-theta0);
        Ok(Self {
            params,
            gains,
            omega_base,
            theta0,
            v0: cvec(v),
            if0: cvec(i_f),
            vo0: cvec(vo),
            io0: cvec(io),
            vinv0: cvec(vinv),
            v_set: vo.norm(),
            p_set: (vo * io.conj()).re,
            i_ff: to_local * cvec(i_f),
            v_ff: to_local * cvec(vinv),
        })
    }

    pub fn params(&self) -> &GfmParams {
        &self.params
    }

    /// Capacitor voltage magnitude held by the voltage loop.
    pub fn voltage_setpoint(&self) -> f64 {
        self.v_set
    }
}

impl DeviceModel for GfmDevice {
    fn state_labels(&self) -> Vec<String> {
        let mut v = vec!["droop_angle".to_string(), "p_filtered".to_string()];
        v.extend(dq_labels("vc_integrator"));
        v.extend(dq_labels("cc_integrator"));
        v.extend(dq_labels("i_filter"));
        v.extend(dq_labels("v_cap"));
        v.extend(dq_labels("i_out"));
        v
    }

    fn equilibrium(&self) -> DVector<f64> {
        let mut x = DVector::zeros(12);
        x[0] = self.theta0;
        x[1] = self.p_set;
        x[6] = self.if0[0];
        x[7] = self.if0[1];
        x[8] = self.vo0[0];
        x[9] = self.vo0[1];
        x[10] = self.io0[0];
        x[11] = self.io0[1];
        x
    }

    fn terminal_voltage(&self) -> Vector2<f64> {
        self.v0
    }

    fn rhs(&self, x: &DVector<f64>, v: &Vector2<f64>) -> DVector<f64> {
        let g = &self.gains;
        let p = &self.params;
        let w = self.omega_base;
        let j = jmat();
        let theta = x[0];
        let p_f = x[1];
        let xi_v = Vector2::new(x[2], x[3]);
        let xi_i = Vector2::new(x[4], x[5]);
        let i_f = Vector2::new(x[6], x[7]);
        let vo = Vector2::new(x[8], x[9]);
        let io = Vector2::new(x[10], x[11]);
        let e_v = Vector2::new(self.v_set, 0.0) - rot(-theta) * vo;
        let i_ref = self.i_ff + e_v * g.voltage_kp + xi_v * g.voltage_ki;
        let e_i = i_ref - rot(-theta) * i_f;
        let vinv = rot(theta) * (self.v_ff + e_i * g.current_kp + xi_i * g.current_ki);
        let dif = (vinv - vo - i_f * p.rf - j * i_f * (w * p.lf)) / p.lf;
        let dvo = (i_f - io - j * vo * (w * p.cf)) / p.cf;
        let dio = (vo - v - io * p.rc - j * io * (w * p.lc)) / p.lc;
        DVector::from_vec(vec![
            w * g.droop * (self.p_set - p_f),
            g.power_filter * (vo.dot(&io) - p_f),
            e_v[0],
            e_v[1],
            e_i[0],
            e_i[1],
            dif[0],
            dif[1],
            dvo[0],
            dvo[1],
            dio[0],
            dio[1],
        ])
    }

    fn drawn_current(&self, x: &DVector<f64>) -> Vector2<f64> {
        -Vector2::new(x[10], x[11])
    }

    fn linearize(&self) -> StateSpace {
        let g = &self.gains;
        let p = &self.params;
        let w = self.omega_base;
        let j = jmat();
        let id = Matrix2::<f64>::identity();
        let to_local = rot(-self.theta0);
        let from_local = rot(self.theta0);
        let vog0 = to_local * self.vo0;
        let ifg0 = to_local * self.if0;
        const TH: usize = 0;
        const PF: usize = 1;
        const XV: usize = 2;
        const XI: usize = 4;
        const IF: usize = 6;
        const VO: usize = 8;
        const IO: usize = 10;

        let mut a = Blocks::zeros(12, 12);
        let mut b = Blocks::zeros(12, 2);
        a.m[(TH, PF)] = -w * g.droop;
        a.m[(PF, PF)] = -g.power_filter;
        a.set_row(PF, VO, &(self.io0 * g.power_filter));
        a.set_row(PF, IO, &(self.vo0 * g.power_filter));

        // de_v = J vog0 dtheta - R(-theta0) dv_o
        let dev_dth = j * vog0;
        let dev_dvo = -to_local;
        a.set_col(XV, TH, &dev_dth);
        a.set2(XV, VO, &dev_dvo);

        // de_i = kpv de_v + kiv dxi_v + J ifg0 dtheta - R(-theta0) di_f
        let dei_dth = dev_dth * g.voltage_kp + j * ifg0;
        let dei_dxv = id * g.voltage_ki;
        let dei_dvo = dev_dvo * g.voltage_kp;
        let dei_dif = -to_local;
        a.set_col(XI, TH, &dei_dth);
        a.set2(XI, XV, &dei_dxv);
        a.set2(XI, VO, &dei_dvo);
        a.set2(XI, IF, &dei_dif);

        // dv_inv = J vinv0 dtheta + R(theta0)(kpc de_i + kic dxi_i)
        let vin_th = j * self.vinv0 + from_local * dei_dth * g.current_kp;
        let vin_xv = from_local * dei_dxv * g.current_kp;
        let vin_xi = from_local * g.current_ki;
        let vin_vo = from_local * dei_dvo * g.current_kp;
        let vin_if = from_local * dei_dif * g.current_kp;
        a.set_col(IF, TH, &(vin_th / p.lf));
        a.set2(IF, XV, &(vin_xv / p.lf));
        a.set2(IF, XI, &(vin_xi / p.lf));
        a.set2(IF, VO, &((vin_vo - id) / p.lf));
        a.set2(IF, IF, &((vin_if - id * p.rf - j * (w * p.lf)) / p.lf));

        a.set2(VO, IF, &(id / p.cf));
        a.set2(VO, IO, &(-id / p.cf));
        a.set2(VO, VO, &(-j * w));

        a.set2(IO, VO, &(id / p.lc));
        a.set2(IO, IO, &((-id * p.rc - j * (w * p.lc)) / p.lc));
        b.set2(IO, 0, &(-id / p.lc));

        let mut c = DMatrix::zeros(2, 12);
        c[(0, IO)] = -1.0;
        c[(1, IO + 1)] = -1.0;
        labelled(a.m, b.m, c, self.state_labels())
    }

    fn rating(&self) -> f64 {
        self.params.rating_mva
    }
}

/// Grid-forming admittance in the system base.
pub fn gfm_admittance(p: &GfmParams, op: &OperatingPoint, base: PerUnitBase) -> Result<DqTransfer, DeviceError> {
    let op_dev = op.rebased(p.rating_mva / base.s_base_mva);
    GfmDevice::new(*p, op_dev, base.omega_base)?.admittance(base)
}
