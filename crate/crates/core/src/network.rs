//! Network node admittance, source admittance and the whole-system model.
//!
//! Every bus carries a 2-vector voltage perturbation `U_b` and a current
//! injection `I_b`. Series branches and RL loads are dynamic in the
//! synchronous frame; bus shunt capacitance (including half of each
//! branch's line charging) makes the bus voltage a state. The whole-system
//! realization maps the injections `I` to the bus voltages `U`, so its
//! transfer matrix is `Z = (Y_G + Y_N)^-1`.
//!
//! Buses without shunt capacitance are algebraic: their voltage is solved
//! from KCL, which needs a nonsingular static conductance at that bus (a
//! resistive load, the placeholder admittance of a source-less bus, or a
//! data device with feedthrough).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::devices::{
    gfl_admittance, gfm_admittance, rl_branch_admittance, sg_admittance, DeviceError, DqTransfer, GflParams,
    GfmParams, OperatingPoint, PerUnitBase, SgParams,
};
use crate::linalg::{self, CMat};
use crate::lintf::{eigendecompose, EigenSystem, LinError, StateSpace};

/// Admittance given to buses without a source.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("case has no buses")]
    NoBuses,
    #[error("duplicate bus label `{0}`")]
    DuplicateBus(String),
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("bus index {0} out of range")]
    BusIndex(usize),
    #[error("branch {index}: {msg}")]
    Branch { index: usize, msg: String },
    #[error("load at bus `{bus}`: {msg}")]
    Load { bus: String, msg: String },
    #[error("bus `{0}` is not connected to the rest of the network")]
    Disconnected(String),
    #[error("two devices at bus `{0}` (aggregate them first)")]
    DuplicateDevice(String),
    #[error("invalid value: {0}")]
    Value(String),
    #[error("algebraic loop: bus(es) {0} have no shunt capacitance and a singular static admittance")]
    AlgebraicLoop(String),
    #[error("bus `{0}` is not a source")]
    NotSource(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("device at bus `{bus}`: {source}")]
    Device { bus: String, source: DeviceError },
    #[error(transparent)]
    Lin(#[from] LinError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub label: String,
    /// Operating voltage magnitude, p.u.
    pub v: f64,
    /// Operating voltage angle, rad.
    pub theta: f64,
    /// Shunt capacitance to ground, p.u. (susceptance `omega_base c`).
    pub shunt_c: f64,
}

impl Bus {
    pub fn new(label: impl Into<String>, v: f64, theta: f64) -> Self {
        Self { label: label.into(), v, theta, shunt_c: 0.0 }
    }

    pub fn voltage(&self) -> Complex64 {
        Complex64::from_polar(self.v, self.theta)
    }
}

/// Where the far end of a branch goes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BranchEnd {
    Bus(usize),
    /// Ideal source (infinite bus) with the given operating voltage; it
    /// carries no voltage perturbation.
    Source { v: f64, theta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: BranchEnd,
    pub r: f64,
    pub l: f64,
    /// Total line charging, split equally between the two ends.
    pub c: f64,
}

/// Constant-impedance load: series R-L to ground (`l = 0` gives a
/// resistor).
#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: usize,
    pub r: f64,
    pub l: f64,
}

#[derive(Debug, Clone)]
pub enum DeviceKind {
    Gfl(GflParams),
    Gfm(GfmParams),
    Sg(SgParams),
    /// Admittance already expressed in the system frame and base.
    Data(DqTransfer),
}

impl DeviceKind {
    pub fn name(&self) -> &'static str {
        match self {
            DeviceKind::Gfl(_) => "gfl",
            DeviceKind::Gfm(_) => "gfm",
            DeviceKind::Sg(_) => "sg",
            DeviceKind::Data(_) => "data",
        }
    }

    /// Rating in MVA; data devices carry none.
    pub fn rating_mva(&self) -> Option<f64> {
        match self {
            DeviceKind::Gfl(p) => Some(p.rating_mva),
            DeviceKind::Gfm(p) => Some(p.rating_mva),
            DeviceKind::Sg(p) => Some(p.rating_mva),
            DeviceKind::Data(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Device {
    pub bus: usize,
    pub kind: DeviceKind,
    /// Delivered active power, system p.u.
    pub p: f64,
    /// Delivered reactive power, system p.u.
    pub q: f64,
}

#[derive(Debug, Clone)]
pub struct NetworkCase {
    pub omega_base: f64,
    pub s_base_mva: f64,
    pub v_base_kv: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub loads: Vec<Load>,
    pub devices: Vec<Device>,
    pub epsilon: f64,
}

impl NetworkCase {
    pub fn new(omega_base: f64, s_base_mva: f64) -> Self {
        Self {
            omega_base,
            s_base_mva,
            v_base_kv: 1.0,
            buses: Vec::new(),
            branches: Vec::new(),
            loads: Vec::new(),
            devices: Vec::new(),
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn base(&self) -> PerUnitBase {
        PerUnitBase::new(self.s_base_mva, self.v_base_kv, self.omega_base)
    }

    pub fn bus_index(&self, label: &str) -> Result<usize, NetworkError> {
        self.buses
            .iter()
            .position(|b| b.label == label)
            .ok_or_else(|| NetworkError::UnknownBus(label.to_string()))
    }

    pub fn add_bus(&mut self, bus: Bus) -> usize {
        self.buses.push(bus);
        self.buses.len() - 1
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let n = self.n_buses();
        if n == 0 {
            return Err(NetworkError::NoBuses);
        }
        for (name, v) in [("omega_base", self.omega_base), ("s_base", self.s_base_mva), ("epsilon", self.epsilon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NetworkError::Value(format!("{name} must be positive, got {v}")));
            }
        }
        for (k, b) in self.buses.iter().enumerate() {
            if self.buses[..k].iter().any(|o| o.label == b.label) {
                return Err(NetworkError::DuplicateBus(b.label.clone()));
            }
            if !(b.v > 0.0 && b.v.is_finite() && b.theta.is_finite()) {
                return Err(NetworkError::Value(format!("bus `{}` voltage must be positive", b.label)));
            }
            if !(b.shunt_c >= 0.0 && b.shunt_c.is_finite()) {
                return Err(NetworkError::Value(format!("bus `{}` shunt capacitance must be >= 0", b.label)));
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            let err = |msg: &str| NetworkError::Branch { index: k + 1, msg: msg.to_string() };
            if br.from >= n {
                return Err(err("from-bus out of range"));
            }
            if let BranchEnd::Bus(t) = br.to {
                if t >= n {
                    return Err(err("to-bus out of range"));
                }
                if t == br.from {
                    return Err(err("both ends on the same bus"));
                }
            }
            if !(br.r >= 0.0 && br.r.is_finite() && br.l >= 0.0 && br.l.is_finite() && br.c >= 0.0 && br.c.is_finite()) {
                return Err(err("R, L and C must be finite and non-negative"));
            }
            if br.l == 0.0 {
                return Err(err(if br.r == 0.0 { "zero impedance" } else { "series inductance must be positive" }));
            }
        }
        for ld in &self.loads {
            if ld.bus >= n {
                return Err(NetworkError::BusIndex(ld.bus));
            }
            let err = |msg: &str| NetworkError::Load { bus: self.buses[ld.bus].label.clone(), msg: msg.to_string() };
            if !(ld.r >= 0.0 && ld.r.is_finite() && ld.l >= 0.0 && ld.l.is_finite()) {
                return Err(err("R and L must be finite and non-negative"));
            }
            if ld.r == 0.0 && ld.l == 0.0 {
                return Err(err("zero impedance"));
            }
        }
        for (k, d) in self.devices.iter().enumerate() {
            if d.bus >= n {
                return Err(NetworkError::BusIndex(d.bus));
            }
            if self.devices[..k].iter().any(|o| o.bus == d.bus) {
                return Err(NetworkError::DuplicateDevice(self.buses[d.bus].label.clone()));
            }
        }
        self.check_connected()
    }

    /// Every bus must reach bus 0 or an ideal source through branches.
    fn check_connected(&self) -> Result<(), NetworkError> {
        let n = self.n_buses();
        // node n stands for all ideal sources
        let mut parent: Vec<usize> = (0..=n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for br in &self.branches {
            let t = match br.to {
                BranchEnd::Bus(t) => t,
                BranchEnd::Source { .. } => n,
            };
            let (a, b) = (find(&mut parent, br.from), find(&mut parent, t));
            parent[a] = b;
        }
        let has_source = self.branches.iter().any(|b| matches!(b.to, BranchEnd::Source { .. }));
        let root = find(&mut parent, 0);
        for k in 0..n {
            let r = find(&mut parent, k);
            let ok = r == root || (has_source && r == find(&mut parent, n));
            if !ok {
                return Err(NetworkError::Disconnected(self.buses[k].label.clone()));
            }
        }
        Ok(())
    }

    /// Operating point of the device at `d` (system per-unit).
    pub fn device_operating_point(&self, d: &Device) -> OperatingPoint {
        let b = &self.buses[d.bus];
        OperatingPoint { v: b.v, theta: b.theta, p: d.p, q: d.q }
    }

    /// Device admittance in the system frame and base.
    pub fn device_transfer(&self, d: &Device) -> Result<DqTransfer, NetworkError> {
        let op = self.device_operating_point(d);
        let base = self.base();
        let out = match &d.kind {
            DeviceKind::Gfl(p) => gfl_admittance(p, &op, base),
            DeviceKind::Gfm(p) => gfm_admittance(p, &op, base),
            DeviceKind::Sg(p) => sg_admittance(p, &op, base),
            DeviceKind::Data(t) => Ok(t.clone()),
        };
        out.map_err(|source| NetworkError::Device { bus: self.buses[d.bus].label.clone(), source })
    }

    /// Total shunt capacitance per bus (bus shunt plus half line charging).
    pub fn bus_capacitance(&self) -> Vec<f64> {
        let mut c: Vec<f64> = self.buses.iter().map(|b| b.shunt_c).collect();
        for br in &self.branches {
            c[br.from] += br.c / 2.0;
            if let BranchEnd::Bus(t) = br.to {
                c[t] += br.c / 2.0;
            }
        }
        c
    }

    /// Complex power mismatch per bus at the fundamental frequency:
    /// device injection minus what the network and loads absorb.
    pub fn power_mismatch(&self) -> Vec<Complex64> {
        let w = self.omega_base;
        let v: Vec<Complex64> = self.buses.iter().map(Bus::voltage).collect();
        let mut i_net = vec![Complex64::new(0.0, 0.0); v.len()];
        for br in &self.branches {
            let y = 1.0 / Complex64::new(br.r, w * br.l);
            let yc = Complex64::new(0.0, w * br.c / 2.0);
            let vt = match br.to {
                BranchEnd::Bus(t) => v[t],
                BranchEnd::Source { v, theta } => Complex64::from_polar(v, theta),
            };
            let i = (v[br.from] - vt) * y;
            i_net[br.from] += i + yc * v[br.from];
            if let BranchEnd::Bus(t) = br.to {
                i_net[t] += -i + yc * v[t];
            }
        }
        for ld in &self.loads {
            i_net[ld.bus] += v[ld.bus] / Complex64::new(ld.r, w * ld.l);
        }
        for (k, b) in self.buses.iter().enumerate() {
            i_net[k] += Complex64::new(0.0, w * b.shunt_c) * v[k];
        }
        let mut s: Vec<Complex64> = v.iter().zip(&i_net).map(|(v, i)| -v * i.conj()).collect();
        for d in &self.devices {
            s[d.bus] += Complex64::new(d.p, d.q);
        }
        s
    }

    /// Newton power flow. A bus with a device holds its voltage magnitude
    /// and the device's `p`; the device's `q` follows. Buses without a
    /// device draw nothing beyond their loads. Without an ideal source the
    /// first grid-forming or machine bus is the angle reference and takes
    /// up the losses. Bus voltages and device powers are updated in place;
    /// returns the iteration count.
    pub fn solve_power_flow(&mut self) -> Result<usize, NetworkError> {
        self.validate()?;
        let n = self.n_buses();
        let has_source = self.branches.iter().any(|b| matches!(b.to, BranchEnd::Source { .. }));
        let slack = if has_source {
            None
        } else {
            let d = self
                .devices
                .iter()
                .find(|d| matches!(d.kind, DeviceKind::Gfm(_) | DeviceKind::Sg(_)))
                .ok_or_else(|| {
                    NetworkError::Unsupported("power flow needs an ideal source or a grid-forming/machine device".into())
                })?;
            Some(d.bus)
        };
        let mut has_dev = vec![false; n];
        for d in &self.devices {
            has_dev[d.bus] = true;
        }
        let thetas: Vec<usize> = (0..n).filter(|&k| Some(k) != slack).collect();
        let mags: Vec<usize> = (0..n).filter(|&k| !has_dev[k]).collect();
        let nv = thetas.len() + mags.len();

        let apply = |case: &mut NetworkCase, x: &DVector<f64>| {
            for (k, &b) in thetas.iter().enumerate() {
                case.buses[b].theta = x[k];
            }
            for (k, &b) in mags.iter().enumerate() {
                case.buses[b].v = x[thetas.len() + k];
            }
        };
        let resid = |case: &NetworkCase| {
            let m = case.power_mismatch();
            DVector::from_iterator(nv, thetas.iter().map(|&b| m[b].re).chain(mags.iter().map(|&b| m[b].im)))
        };

        let mut x = DVector::from_iterator(
            nv,
            thetas.iter().map(|&b| self.buses[b].theta).chain(mags.iter().map(|&b| self.buses[b].v)),
        );
        let mut work = self.clone();
        let mut iters = 0;
        loop {
            apply(&mut work, &x);
            let f = resid(&work);
            if f.amax() < 1e-12 {
                break;
            }
            if iters == 40 || !f.iter().all(|v| v.is_finite()) {
                return Err(NetworkError::Value(format!("power flow did not converge (mismatch {:.3e})", f.amax())));
            }
            let h = 1e-6;
            let mut jac = DMatrix::zeros(nv, nv);
            for k in 0..nv {
                let mut xp = x.clone();
                xp[k] += h;
                apply(&mut work, &xp);
                let fp = resid(&work);
                xp[k] -= 2.0 * h;
                apply(&mut work, &xp);
                let fm = resid(&work);
                jac.set_column(k, &((fp - fm) / (2.0 * h)));
            }
            let dx = jac.lu().solve(&f).ok_or_else(|| NetworkError::Value("singular power-flow Jacobian".into()))?;
            x -= dx;
            iters += 1;
        }
        let m = work.power_mismatch();
        for d in &mut work.devices {
            d.q -= m[d.bus].im;
            if Some(d.bus) == slack {
                d.p -= m[d.bus].re;
            }
        }
        *self = work;
        Ok(iters)
    }
}

fn rl_impedance(r: f64, l: f64, w: f64, s: Complex64) -> CMat {
    CMat::from_row_slice(2, 2, &[s * l + r, Complex64::new(-w * l, 0.0), Complex64::new(w * l, 0.0), s * l + r])
}

/// Network admittance `Y_N(s)`: branches, loads and shunts.
#[derive(Debug, Clone)]
pub struct NodeAdmittance {
    omega_base: f64,
    n: usize,
    branches: Vec<Branch>,
    loads: Vec<Load>,
    capacitance: Vec<f64>,
}

impl NodeAdmittance {
    pub fn n_buses(&self) -> usize {
        self.n
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    /// Per-bus shunt capacitance.
    pub fn capacitance(&self) -> &[f64] {
        &self.capacitance
    }

    /// Direct evaluation from the element formulas.
    pub fn eval(&self, s: Complex64) -> CMat {
        let w = self.omega_base;
        let mut y = CMat::zeros(2 * self.n, 2 * self.n);
        let mut add = |i: usize, j: usize, m: &CMat| {
            let mut v = y.view_mut((2 * i, 2 * j), (2, 2));
            v += m;
        };
        for br in &self.branches {
            let yb = rl_branch_admittance(br.r, br.l, w, s);
            add(br.from, br.from, &yb);
            if let BranchEnd::Bus(t) = br.to {
                add(t, t, &yb);
                add(br.from, t, &(-&yb));
                add(t, br.from, &(-&yb));
            }
        }
        for ld in &self.loads {
            let yl = linalg::inverse(&rl_impedance(ld.r, ld.l, w, s)).expect("load impedance is nonzero");
            add(ld.bus, ld.bus, &yl);
        }
        for (k, c) in self.capacitance.iter().enumerate() {
            if *c > 0.0 {
                let ys = CMat::identity(2, 2) * (s * *c) + CMat::from_row_slice(2, 2, &[
                    Complex64::new(0.0, 0.0),
                    Complex64::new(-w * c, 0.0),
                    Complex64::new(w * c, 0.0),
                    Complex64::new(0.0, 0.0),
                ]);
                add(k, k, &ys);
            }
        }
        y
    }

    /// Proper part of `Y_N` as a state-space model (voltages in, currents
    /// drawn out): branches and loads only. The full matrix adds
    /// `s C + w C J` per bus for the shunt capacitance.
    pub fn proper_realization(&self) -> Result<StateSpace, NetworkError> {
        let els = network_elements(self);
        Ok(StateSpace::new(els.a, els.b, els.c, els.d)?)
    }
}

pub fn build_node_admittance(case: &NetworkCase) -> Result<NodeAdmittance, NetworkError> {
    case.validate()?;
    Ok(NodeAdmittance {
        omega_base: case.omega_base,
        n: case.n_buses(),
        branches: case.branches.clone(),
        loads: case.loads.clone(),
        capacitance: case.bus_capacitance(),
    })
}

/// Source admittance `Y_G`: one entry per bus, `None` for placeholders.
#[derive(Debug, Clone)]
pub struct SourceAdmittance {
    pub blocks: Vec<Option<DqTransfer>>,
    pub epsilon: f64,
}

impl SourceAdmittance {
    pub fn is_source(&self, i: usize) -> bool {
        matches!(self.blocks.get(i), Some(Some(_)))
    }

    /// Block `i` of `Y_G(s)`.
    pub fn block(&self, i: usize, s: Complex64) -> Result<CMat, NetworkError> {
        match &self.blocks[i] {
            Some(t) => Ok(t.admittance_at(s).map_err(|e| match e {
                DeviceError::Lin(l) => NetworkError::Lin(l),
                other => NetworkError::Device { bus: i.to_string(), source: other },
            })?),
            None => Ok(CMat::identity(2, 2) * Complex64::new(self.epsilon, 0.0)),
        }
    }

    pub fn eval(&self, s: Complex64) -> Result<CMat, NetworkError> {
        let n = self.blocks.len();
        let mut y = CMat::zeros(2 * n, 2 * n);
        for i in 0..n {
            y.view_mut((2 * i, 2 * i), (2, 2)).copy_from(&self.block(i, s)?);
        }
        Ok(y)
    }
}

pub fn assemble_source_admittance(case: &NetworkCase) -> Result<SourceAdmittance, NetworkError> {
    case.validate()?;
    let mut blocks = vec![None; case.n_buses()];
    for d in &case.devices {
        blocks[d.bus] = Some(case.device_transfer(d)?);
    }
    Ok(SourceAdmittance { blocks, epsilon: case.epsilon })
}

/// Stacked element dynamics `x' = A x + B U`, drawn currents `C x + D U`.
struct Elements {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    labels: Vec<String>,
}

impl Elements {
    fn new(nb: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, nb),
            c: DMatrix::zeros(nb, 0),
            d: DMatrix::zeros(nb, nb),
            labels: Vec::new(),
        }
    }

    /// Append an element with local matrices; `cols` maps its voltage
    /// inputs and `rows` its current outputs to bus components, with signs.
    fn push(
        &mut self,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        c: &DMatrix<f64>,
        labels: Vec<String>,
        ports: &[(usize, f64)],
    ) {
        let n0 = self.a.nrows();
        let k = a.nrows();
        let nb = self.d.nrows();
        let mut na = DMatrix::zeros(n0 + k, n0 + k);
        na.view_mut((0, 0), (n0, n0)).copy_from(&self.a);
        na.view_mut((n0, n0), (k, k)).copy_from(a);
        let mut nbm = DMatrix::zeros(n0 + k, nb);
        nbm.view_mut((0, 0), (n0, nb)).copy_from(&self.b);
        let mut ncm = DMatrix::zeros(nb, n0 + k);
        ncm.view_mut((0, 0), (nb, n0)).copy_from(&self.c);
        for (p, &(bus, sign)) in ports.iter().enumerate() {
            for q in 0..2 {
                let comp = 2 * bus + q;
                for r in 0..k {
                    nbm[(n0 + r, comp)] += sign * b[(r, 2 * p + q)];
                    ncm[(comp, n0 + r)] += sign * c[(2 * p + q, r)];
                }
            }
        }
        self.a = na;
        self.b = nbm;
        self.c = ncm;
        self.labels.extend(labels);
    }

    fn add_static(&mut self, bus: usize, g: &DMatrix<f64>) {
        let mut v = self.d.view_mut((2 * bus, 2 * bus), (2, 2));
        v += g;
    }
}

fn dq(prefix: &str) -> Vec<String> {
    vec![format!("{prefix}_d"), format!("{prefix}_q")]
}

/// Series R-L element: `L i' = U_1 - U_2 - R i - w L J i`, drawing `i`
/// from its first port and `-i` from its second.
fn rl_element(r: f64, l: f64, w: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(2, 2, &[-r / l, w, -w, -r / l]);
    let mut b = DMatrix::zeros(2, 4);
    let mut c = DMatrix::zeros(4, 2);
    for q in 0..2 {
        b[(q, q)] = 1.0 / l;
        b[(q, 2 + q)] = -1.0 / l;
        c[(q, q)] = 1.0;
        c[(2 + q, q)] = -1.0;
    }
    (a, b, c)
}

fn network_elements(net: &NodeAdmittance) -> Elements {
    let w = net.omega_base;
    let mut els = Elements::new(2 * net.n);
    for (k, br) in net.branches.iter().enumerate() {
        let (a, b, c) = rl_element(br.r, br.l, w);
        let labels = dq(&format!("branch{}.i", k + 1));
        match br.to {
            BranchEnd::Bus(t) => els.push(&a, &b, &c, labels, &[(br.from, 1.0), (t, 1.0)]),
            BranchEnd::Source { .. } => {
                let b1 = b.columns(0, 2).into_owned();
                let c1 = c.rows(0, 2).into_owned();
                els.push(&a, &b1, &c1, labels, &[(br.from, 1.0)]);
            }
        }
    }
    for ld in &net.loads {
        if ld.l > 0.0 {
            let (a, b, c) = rl_element(ld.r, ld.l, w);
            let b1 = b.columns(0, 2).into_owned();
            let c1 = c.rows(0, 2).into_owned();
            els.push(&a, &b1, &c1, dq(&format!("load{}.i", ld.bus + 1)), &[(ld.bus, 1.0)]);
        } else {
            els.add_static(ld.bus, &(DMatrix::identity(2, 2) / ld.r));
        }
    }
    els
}

/// A system eigenvalue with its modal quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    /// Index into the eigensystem of the whole-system realization.
    pub index: usize,
    pub lambda: Complex64,
    /// Damping ratio `-sigma / |lambda|`.
    pub zeta: f64,
}

impl Mode {
    pub fn new(index: usize, lambda: Complex64) -> Self {
        let mag = lambda.norm();
        let zeta = if mag > 0.0 { -lambda.re / mag } else { 0.0 };
        Self { index, lambda, zeta }
    }
    pub fn sigma(&self) -> f64 {
        self.lambda.re
    }
    pub fn omega(&self) -> f64 {
        self.lambda.im
    }
    pub fn freq_hz(&self) -> f64 {
        self.lambda.im / (2.0 * PI)
    }
}

/// The assembled whole-system model.
#[derive(Debug, Clone)]
pub struct SystemModel {
    bus_labels: Vec<String>,
    bus_voltage: Vec<Complex64>,
    omega_base: f64,
    sources: SourceAdmittance,
    source_kinds: Vec<Option<&'static str>>,
    source_rating: Vec<Option<f64>>,
    network: NodeAdmittance,
    whole: StateSpace,
    eigen: EigenSystem,
}

impl SystemModel {
    pub fn n_buses(&self) -> usize {
        self.bus_labels.len()
    }
    pub fn bus_labels(&self) -> &[String] {
        &self.bus_labels
    }
    pub fn bus_index(&self, label: &str) -> Result<usize, NetworkError> {
        self.bus_labels
            .iter()
            .position(|b| b == label)
            .ok_or_else(|| NetworkError::UnknownBus(label.to_string()))
    }
    pub fn bus_voltage(&self, i: usize) -> Complex64 {
        self.bus_voltage[i]
    }
    pub fn omega_base(&self) -> f64 {
        self.omega_base
    }
    pub fn is_source(&self, i: usize) -> bool {
        self.sources.is_source(i)
    }
    /// `gfl`, `gfm`, `sg`, `data` or `None` for a placeholder bus.
    pub fn source_kind(&self, i: usize) -> Option<&'static str> {
        self.source_kinds[i]
    }
    /// Device rating on the system base (p.u.), when known.
    pub fn source_rating(&self, i: usize) -> Option<f64> {
        self.source_rating[i]
    }
    pub fn source_buses(&self) -> Vec<usize> {
        (0..self.n_buses()).filter(|&i| self.is_source(i)).collect()
    }
    pub fn sources(&self) -> &SourceAdmittance {
        &self.sources
    }
    pub fn network(&self) -> &NodeAdmittance {
        &self.network
    }
    /// Realization of `Z`: inputs `bus<label>.Id/Iq`, outputs
    /// `bus<label>.Ud/Uq`.
    pub fn whole(&self) -> &StateSpace {
        &self.whole
    }
    pub fn eigen(&self) -> &EigenSystem {
        &self.eigen
    }

    pub fn modes(&self) -> Vec<Mode> {
        self.eigen.eigenvalues().iter().enumerate().map(|(k, l)| Mode::new(k, *l)).collect()
    }

    pub fn y_g(&self, s: Complex64) -> Result<CMat, NetworkError> {
        self.sources.eval(s)
    }
    pub fn y_n(&self, s: Complex64) -> CMat {
        self.network.eval(s)
    }
    /// `Y = Y_G + Y_N` from the element formulas.
    pub fn y(&self, s: Complex64) -> Result<CMat, NetworkError> {
        Ok(self.y_g(s)? + self.y_n(s))
    }
    /// `Z` from the whole-system realization.
    pub fn z(&self, s: Complex64) -> Result<CMat, NetworkError> {
        Ok(self.whole.eval(s)?)
    }

    /// Realization of the block `Z_ji` (input bus `i`, output bus `j`).
    pub fn z_block(&self, j: usize, i: usize) -> Result<StateSpace, NetworkError> {
        let n = self.n_buses();
        if i >= n || j >= n {
            return Err(NetworkError::BusIndex(i.max(j)));
        }
        Ok(self.whole.select(&[2 * i, 2 * i + 1], &[2 * j, 2 * j + 1])?)
    }

    /// Scale-free determinant test of `Y(lambda)`: `|det Y|` over the
    /// product of column norms.
    pub fn det_ratio(&self, lambda: Complex64) -> Result<f64, NetworkError> {
        Ok(linalg::hadamard_ratio(&self.y(lambda)?))
    }
}

pub fn build_system(case: &NetworkCase) -> Result<SystemModel, NetworkError> {
    let network = build_node_admittance(case)?;
    let sources = assemble_source_admittance(case)?;
    let n = case.n_buses();
    let nb = 2 * n;
    let w = case.omega_base;

    let mut els = Elements::new(nb);
    let mut kinds = vec![None; n];
    let mut ratings = vec![None; n];
    for d in &case.devices {
        kinds[d.bus] = Some(d.kind.name());
        ratings[d.bus] = d.kind.rating_mva().map(|r| r / case.s_base_mva);
    }
    for (i, blk) in sources.blocks.iter().enumerate() {
        match blk {
            Some(t) => {
                let ss = t.realization();
                let prefix = format!("{}@{}", kinds[i].unwrap_or("dev"), case.buses[i].label);
                let labels = ss.state_labels().iter().map(|l| format!("{prefix}.{l}")).collect();
                els.push(ss.a(), ss.b(), ss.c(), labels, &[(i, 1.0)]);
                els.add_static(i, ss.d());
            }
            None => els.add_static(i, &(DMatrix::identity(2, 2) * case.epsilon)),
        }
    }
    let net = network_elements(&network);
    els.push(&net.a, &net.b, &net.c, net.labels, &(0..n).map(|k| (k, 1.0)).collect::<Vec<_>>());
    els.d += &net.d;

    let cap = network.capacitance();
    let cap_comp: Vec<usize> = (0..nb).filter(|c| cap[c / 2] > 0.0).collect();
    let alg_comp: Vec<usize> = (0..nb).filter(|c| cap[c / 2] == 0.0).collect();
    let ne = els.a.nrows();
    let nc = cap_comp.len();
    let na = alg_comp.len();

    let m = if na > 0 {
        let d_aa = els.d.select_rows(&alg_comp).select_columns(&alg_comp);
        let scale = d_aa.amax();
        let lu = d_aa.clone().lu();
        let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |a, x| a.min(x.abs()));
        if !(scale > 0.0) || min_pivot <= 1e-14 * scale {
            let buses: Vec<String> = alg_comp
                .iter()
                .step_by(2)
                .filter(|&&c| els.d.view((c, c), (2, 2)).amax() == 0.0)
                .map(|&c| format!("`{}`", case.buses[c / 2].label))
                .collect();
            let list = if buses.is_empty() {
                alg_comp.iter().step_by(2).map(|&c| format!("`{}`", case.buses[c / 2].label)).collect::<Vec<_>>()
            } else {
                buses
            };
            return Err(NetworkError::AlgebraicLoop(list.join(", ")));
        }
        lu.try_inverse().expect("pivots checked")
    } else {
        DMatrix::zeros(0, 0)
    };

    let b_a = els.b.select_columns(&alg_comp);
    let b_c = els.b.select_columns(&cap_comp);
    let c_a = els.c.select_rows(&alg_comp);
    let c_c = els.c.select_rows(&cap_comp);
    let d_ac = els.d.select_rows(&alg_comp).select_columns(&cap_comp);
    let d_ca = els.d.select_rows(&cap_comp).select_columns(&alg_comp);
    let d_cc = els.d.select_rows(&cap_comp).select_columns(&cap_comp);
    let e_a = DMatrix::identity(nb, nb).select_rows(&alg_comp);
    let e_c = DMatrix::identity(nb, nb).select_rows(&cap_comp);

    // shunt current C U' + w C J U, per capacitive bus
    let mut cinv = DMatrix::zeros(nc, nc);
    let mut wcj = DMatrix::zeros(nc, nc);
    for (k, &comp) in cap_comp.iter().enumerate() {
        let c = cap[comp / 2];
        cinv[(k, k)] = 1.0 / c;
        if comp % 2 == 0 {
            wcj[(k, k + 1)] = -w * c;
            wcj[(k + 1, k)] = w * c;
        }
    }

    let ns = ne + nc;
    let mut a = DMatrix::zeros(ns, ns);
    let mut b = DMatrix::zeros(ns, nb);
    let mut c = DMatrix::zeros(nb, ns);
    let mut d = DMatrix::zeros(nb, nb);
    let bm = &b_a * &m;
    let dm = &d_ca * &m;
    a.view_mut((0, 0), (ne, ne)).copy_from(&(&els.a - &bm * &c_a));
    a.view_mut((0, ne), (ne, nc)).copy_from(&(&b_c - &bm * &d_ac));
    a.view_mut((ne, 0), (nc, ne)).copy_from(&(&cinv * -(&c_c - &dm * &c_a)));
    a.view_mut((ne, ne), (nc, nc)).copy_from(&(&cinv * -(&d_cc - &dm * &d_ac + &wcj)));
    b.view_mut((0, 0), (ne, nb)).copy_from(&(&bm * &e_a));
    b.view_mut((ne, 0), (nc, nb)).copy_from(&(&cinv * (&e_c - &dm * &e_a)));
    for (k, &comp) in cap_comp.iter().enumerate() {
        c[(comp, ne + k)] = 1.0;
    }
    let mc = &m * &c_a;
    let md = &m * &d_ac;
    let me = &m * &e_a;
    for (k, &comp) in alg_comp.iter().enumerate() {
        for q in 0..ne {
            c[(comp, q)] = -mc[(k, q)];
        }
        for q in 0..nc {
            c[(comp, ne + q)] = -md[(k, q)];
        }
        for q in 0..nb {
            d[(comp, q)] = me[(k, q)];
        }
    }

    let mut states = els.labels;
    for &comp in &cap_comp {
        let axis = if comp % 2 == 0 { "d" } else { "q" };
        states.push(format!("bus{}.v_{axis}", case.buses[comp / 2].label));
    }
    let mut inputs = Vec::with_capacity(nb);
    let mut outputs = Vec::with_capacity(nb);
    for bus in &case.buses {
        for axis in ["d", "q"] {
            inputs.push(format!("bus{}.I{axis}", bus.label));
            outputs.push(format!("bus{}.U{axis}", bus.label));
        }
    }
    let whole = StateSpace::new(a, b, c, d)?.with_labels(states, inputs, outputs)?;
    let eigen = eigendecompose(&whole)?;
    Ok(SystemModel {
        bus_labels: case.buses.iter().map(|b| b.label.clone()).collect(),
        bus_voltage: case.buses.iter().map(Bus::voltage).collect(),
        omega_base: w,
        sources,
        source_kinds: kinds,
        source_rating: ratings,
        network,
        whole,
        eigen,
    })
}

/// A mode annotated with the determinant check of `Y(lambda)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeReport {
    pub mode: Mode,
    /// `|det Y(lambda)| / prod_k ||Y e_k||`; `None` when `lambda` is a
    /// pole of `Y` itself.
    pub det_ratio: Option<f64>,
}

/// Threshold on the normalised determinant at a system mode.
pub const DET_RATIO_TOL: f64 = 1e-6;

impl ModeReport {
    pub fn det_ok(&self) -> bool {
        self.det_ratio.is_some_and(|r| r < DET_RATIO_TOL)
    }
}

/// Modes of the whole system, optionally restricted to a frequency band
/// (Hz, applied to `|Im lambda| / 2 pi`), sorted by damping ratio.
pub fn system_modes(model: &SystemModel, band: Option<(f64, f64)>) -> Vec<ModeReport> {
    let mut out: Vec<ModeReport> = model
        .modes()
        .into_iter()
        .filter(|m| match band {
            Some((lo, hi)) => {
                let f = m.freq_hz().abs();
                f >= lo && f <= hi
            }
            None => true,
        })
        .map(|mode| ModeReport { mode, det_ratio: model.det_ratio(mode.lambda).ok() })
        .collect();
    out.sort_by(|a, b| {
        a.mode
            .zeta
            .total_cmp(&b.mode.zeta)
            .then(b.mode.lambda.im.total_cmp(&a.mode.lambda.im))
            .then(a.mode.index.cmp(&b.mode.index))
    });
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub f_hz: f64,
    pub z: CMat,
}

/// `Z_ji(j 2 pi f)` over a frequency grid in Hz.
pub fn impedance_scan(model: &SystemModel, j: usize, i: usize, freqs_hz: &[f64]) -> Result<Vec<ScanPoint>, NetworkError> {
    let blk = model.z_block(j, i)?;
    freqs_hz
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f.is_finite()) {
                return Err(NetworkError::Value(format!("scan frequency must be positive, got {f}")));
            }
            Ok(ScanPoint { f_hz: f, z: blk.eval(Complex64::new(0.0, 2.0 * PI * f))? })
        })
        .collect()
}

/// Log-spaced grid of `points` frequencies from `fmin` to `fmax`.
pub fn log_grid(fmin: f64, fmax: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![fmin],
        _ => (0..points).map(|k| fmin * (fmax / fmin).powf(k as f64 / (points - 1) as f64)).collect(),
    }
}

/// `[Y_G^-1 Y]_{ij}` at `s`: how a voltage perturbation at node `j` moves
/// the internal voltage of source `i`.
pub fn source_voltage_transfer(model: &SystemModel, i: usize, j: usize, s: Complex64) -> Result<CMat, NetworkError> {
    let n = model.n_buses();
    if i >= n || j >= n {
        return Err(NetworkError::BusIndex(i.max(j)));
    }
    let ygi = model.sources.block(i, s)?;
    let y = model.y(s)?;
    let yij = linalg::block2(&y, i, j);
    linalg::solve(&ygi, &yij).ok_or(NetworkError::Lin(LinError::AtPole { re: s.re, im: s.im }))
}

/// Current injection (system frame) equivalent to an extra active-power
/// load `dp` at bus `j`: drawn in phase with the bus voltage.
pub fn load_step_injection(model: &SystemModel, j: usize, dp: f64) -> DVector<f64> {
    let v = model.bus_voltage(j);
    let unit = v / v.norm();
    let mut u = DVector::zeros(2 * model.n_buses());
    u[2 * j] = -dp / v.norm() * unit.re;
    u[2 * j + 1] = -dp / v.norm() * unit.im;
    u
}

/// Voltage-magnitude perturbation at bus `j` from the output trajectory
/// rows of the whole-system model.
pub fn voltage_magnitude(model: &SystemModel, y: &DMatrix<f64>, j: usize) -> Vec<f64> {
    let v = model.bus_voltage(j);
    let unit = v / v.norm();
    (0..y.nrows()).map(|k| unit.re * y[(k, 2 * j)] + unit.im * y[(k, 2 * j + 1)]).collect()
}

/// Moving average over `window` samples (shorter at the start). With a
/// window of one fundamental period this mimics an RMS voltage measurement
/// and hides the fundamental-frequency and faster network transients.
pub fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    for k in 0..v.len() {
        acc += v[k];
        if k >= w {
            acc -= v[k - w];
        }
        out.push(acc / (k + 1).min(w) as f64);
    }
    out
}

/// Post-disturbance oscillation of a sampled response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oscillation {
    /// Mean over the last `tail` seconds.
    pub final_value: f64,
    /// Largest deviation from the final value from `t_from` on.
    pub peak: f64,
    /// Last time the deviation exceeds `band * peak`, relative to `t_from`.
    pub settling: f64,
}

/// Measure a response sampled every `dt` seconds from `t = 0`: one-cycle
/// averaging (`period` seconds), then peak and settling time after
/// `t_from`.
pub fn oscillation(v: &[f64], dt: f64, period: f64, t_from: f64, tail: f64, band: f64) -> Oscillation {
    let avg = moving_average(v, (period / dt).round() as usize);
    let n = avg.len();
    let nt = ((tail / dt).round() as usize).clamp(1, n.max(1));
    let final_value = avg[n - nt..].iter().sum::<f64>() / nt as f64;
    let k0 = ((t_from / dt).round() as usize).min(n);
    let dev: Vec<f64> = avg[k0..].iter().map(|x| (x - final_value).abs()).collect();
    let peak = dev.iter().cloned().fold(0.0, f64::max);
    let last = dev.iter().rposition(|d| *d > band * peak).unwrap_or(0);
    Oscillation { final_value, peak, settling: last as f64 * dt }
}
