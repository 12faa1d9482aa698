//! Synchronous generator: classical swing model behind the transient
//! reactance, with stator inductance dynamics in the synchronous frame.
//!
//! States `[delta, w, i_d, i_q]`, `e = E' (cos delta, sin delta)`:
//!
//! ```text
//! delta' = w_b w
//! 2H w'  = P_m - e . i - D w
//! L' i'  = e - v - Rs i - w_b L' J i        (L' = X'd / w_b)
//! ```

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    cvec, dq_labels, jmat, labelled, non_negative, positive, Blocks, DeviceError, DeviceModel, DqTransfer,
    OperatingPoint, PerUnitBase,
};
use crate::lintf::StateSpace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgParams {
    /// Inertia constant, s.
    pub h: f64,
    /// Damping, p.u. power per p.u. speed.
    pub damping: f64,
    /// Transient reactance, p.u.
    pub xd_prime: f64,
    /// Stator resistance, p.u.
    pub rs: f64,
    pub rating_mva: f64,
}

impl Default for SgParams {
    fn default() -> Self {
        Self { h: 4.0, damping: 10.0, xd_prime: 0.3, rs: 0.003, rating_mva: 100.0 }
    }
}

impl SgParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        positive("h", self.h)?;
        non_negative("damping", self.damping)?;
        positive("xd_prime", self.xd_prime)?;
        non_negative("rs", self.rs)?;
        positive("rating_mva", self.rating_mva)
    }
}

#[derive(Debug, Clone)]
pub struct SgDevice {
    params: SgParams,
    omega_base: f64,
    v0: Vector2<f64>,
    i0: Vector2<f64>,
    e0: Vector2<f64>,
    delta0: f64,
    e_mag: f64,
    p_m: f64,
}

impl SgDevice {
    pub fn new(params: SgParams, op: OperatingPoint, omega_base: f64) -> Result<Self, DeviceError> {
        params.validate()?;
        op.validate()?;
        positive("omega_base", omega_base)?;
        let v = op.voltage();
        let i = op.current();
        let e = v + i * Complex64::new(params.rs, params.xd_prime);
        Ok(Self {
            params,
            omega_base,
            v0: cvec(v),
            i0: cvec(i),
            e0: cvec(e),
            delta0: e.arg(),
            e_mag: e.norm(),
            p_m: (e * i.conj()).re,
        })
    }

    fn l_prime(&self) -> f64 {
        self.params.xd_prime / self.omega_base
    }

    /// Internal EMF magnitude.
    pub fn emf(&self) -> f64 {
        self.e_mag
    }

    /// Rotor angle at the operating point.
    pub fn rotor_angle(&self) -> f64 {
        self.delta0
    }
}

impl DeviceModel for SgDevice {
    fn state_labels(&self) -> Vec<String> {
        let mut v = vec!["rotor_angle".to_string(), "speed".to_string()];
        v.extend(dq_labels("i_stator"));
        v
    }

    fn equilibrium(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.delta0, 0.0, self.i0[0], self.i0[1]])
    }

    fn terminal_voltage(&self) -> Vector2<f64> {
        self.v0
    }

    fn rhs(&self, x: &DVector<f64>, v: &Vector2<f64>) -> DVector<f64> {
        let p = &self.params;
        let lp = self.l_prime();
        let e = Vector2::new(x[0].cos(), x[0].sin()) * self.e_mag;
        let i = Vector2::new(x[2], x[3]);
        let di = (e - v - i * p.rs - jmat() * i * (self.omega_base * lp)) / lp;
        DVector::from_vec(vec![
            self.omega_base * x[1],
            (self.p_m - e.dot(&i) - p.damping * x[1]) / (2.0 * p.h),
            di[0],
            di[1],
        ])
    }

    fn drawn_current(&self, x: &DVector<f64>) -> Vector2<f64> {
        -Vector2::new(x[2], x[3])
    }

    fn linearize(&self) -> StateSpace {
        let p = &self.params;
        let lp = self.l_prime();
        let j = jmat();
        let de_ddelta = j * self.e0;
        let mut a = Blocks::zeros(4, 4);
        let mut b = Blocks::zeros(4, 2);
        a.m[(0, 1)] = self.omega_base;
        a.m[(1, 0)] = -self.i0.dot(&de_ddelta) / (2.0 * p.h);
        a.m[(1, 1)] = -p.damping / (2.0 * p.h);
        a.set_row(1, 2, &(-self.e0 / (2.0 * p.h)));
        a.set_col(2, 0, &(de_ddelta / lp));
        a.set2(2, 2, &((Matrix2::identity() * (-p.rs) - j * (self.omega_base * lp)) / lp));
        b.set2(2, 0, &(Matrix2::identity() * (-1.0 / lp)));
        let mut c = DMatrix::zeros(2, 4);
        c[(0, 2)] = -1.0;
        c[(1, 3)] = -1.0;
        labelled(a.m, b.m, c, self.state_labels())
    }

    fn rating(&self) -> f64 {
        self.params.rating_mva
    }
}

pub fn sg_admittance(p: &SgParams, op: &OperatingPoint, base: PerUnitBase) -> Result<DqTransfer, DeviceError> {
    let op_dev = op.rebased(p.rating_mva / base.s_base_mva);
    SgDevice::new(*p, op_dev, base.omega_base)?.admittance(base)
}
