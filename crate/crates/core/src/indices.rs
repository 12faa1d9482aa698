//! Interaction indices between sources and nodes at system modes.
//!
//! The modal voltage sensitivity of source `i` to node `j` at mode `k` is
//! `-Y_Gi(lambda_k)^T (Res Z_ji)^T`; the voltage disturbance margin is
//! `-sigma_k` over its Frobenius norm, and a source's support to the grid
//! is its smallest self-margin over a subset of lightly damped modes.

pub use crate::format::fmt_num;
use crate::format::json_num;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::linalg::{self, CMat};
use crate::lintf::{residue_with, LinError, PortSelection};
use crate::network::{BranchEnd, Mode, NetworkError, SystemModel};

/// Denominator below which a pair counts as insensitive (VDM = +inf).
pub const INSENSITIVE_NORM: f64 = 1e-12;

/// Advisory STG boundary for grid-forming sources.
pub const STG_ADVISORY_GFM: f64 = 0.4;
/// Advisory STG boundary for grid-following sources.
pub const STG_ADVISORY_GFL: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("bus `{0}` is not a source")]
    NotSource(String),
    #[error("mode subset is empty")]
    EmptySubset,
    #[error("invalid threshold: {0}")]
    Threshold(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Lin(#[from] LinError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetThresholds {
    pub zeta_max: f64,
    pub f_max_hz: f64,
    pub sigma_floor: f64,
    pub include_real: bool,
}

impl Default for SubsetThresholds {
    fn default() -> Self {
        Self { zeta_max: 0.2, f_max_hz: 100.0, sigma_floor: 50.0, include_real: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSubset {
    pub modes: Vec<Mode>,
    pub thresholds: SubsetThresholds,
}

/// Lightly damped, low-frequency modes; one member per conjugate pair
/// (the one with positive imaginary part), ordered by damping ratio.
pub fn select_modes(modes: &[Mode], th: SubsetThresholds) -> Result<ModeSubset, IndexError> {
    for (name, v) in [("zeta_max", th.zeta_max), ("f_max", th.f_max_hz), ("sigma_floor", th.sigma_floor)] {
        if !(v > 0.0) {
            return Err(IndexError::Threshold(format!("{name} must be positive, got {v}")));
        }
    }
    let mut keep: Vec<Mode> = modes
        .iter()
        .filter(|m| m.lambda.im > 0.0 || (th.include_real && m.lambda.im == 0.0))
        .filter(|m| m.zeta < th.zeta_max && m.freq_hz() <= th.f_max_hz && m.sigma() > -th.sigma_floor)
        .cloned()
        .collect();
    keep.sort_by(|a, b| a.zeta.total_cmp(&b.zeta).then(a.index.cmp(&b.index)));
    Ok(ModeSubset { modes: keep, thresholds: th })
}

fn bus_ports(model: &SystemModel, j: usize, i: usize) -> Result<PortSelection, IndexError> {
    let n = model.n_buses();
    if i >= n || j >= n {
        return Err(NetworkError::BusIndex(i.max(j)).into());
    }
    Ok(PortSelection::indices(model.whole(), &[2 * i, 2 * i + 1], &[2 * j, 2 * j + 1])?)
}

/// `Res_{lambda_k} Z_ji` from the whole-system eigensystem.
pub fn z_residue(model: &SystemModel, j: usize, i: usize, k: usize) -> Result<CMat, IndexError> {
    let sel = bus_ports(model, j, i)?;
    Ok(residue_with(model.eigen(), &sel, k)?.r)
}

fn require_source(model: &SystemModel, i: usize) -> Result<(), IndexError> {
    if i >= model.n_buses() {
        return Err(NetworkError::BusIndex(i).into());
    }
    if !model.is_source(i) {
        return Err(IndexError::NotSource(model.bus_labels()[i].clone()));
    }
    Ok(())
}

/// `-Y_Gi(lambda_k)^T (Res_{lambda_k} Z_ji)^T`.
pub fn modal_voltage_sensitivity(model: &SystemModel, i: usize, j: usize, k: usize) -> Result<CMat, IndexError> {
    require_source(model, i)?;
    let lambda = model.eigen().eigenvalues()[k];
    let ygi = model.sources().block(i, lambda)?;
    let res = z_residue(model, j, i, k)?;
    Ok(sensitivity_from(&ygi, &res))
}

/// The sensitivity from its two ingredients, for callers that obtained
/// them another way (e.g. from fitted data).
pub fn sensitivity_from(ygi: &CMat, res_z_ji: &CMat) -> CMat {
    -(ygi.transpose() * res_z_ji.transpose())
}

/// `-sigma / ||S||_F`, or `+inf` for an insensitive pair.
pub fn vdm_from(sigma: f64, sensitivity: &CMat) -> f64 {
    let den = linalg::fro(sensitivity);
    if den < INSENSITIVE_NORM {
        f64::INFINITY
    } else {
        -sigma / den
    }
}

pub fn vdm(model: &SystemModel, i: usize, j: usize, k: usize) -> Result<f64, IndexError> {
    let s = modal_voltage_sensitivity(model, i, j, k)?;
    Ok(vdm_from(model.eigen().eigenvalues()[k].re, &s))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stg {
    pub value: f64,
    pub mode: Mode,
}

pub fn stg(model: &SystemModel, i: usize, subset: &ModeSubset) -> Result<Stg, IndexError> {
    if subset.modes.is_empty() {
        return Err(IndexError::EmptySubset);
    }
    let mut best: Option<Stg> = None;
    for m in &subset.modes {
        let v = vdm(model, i, i, m.index)?;
        if best.is_none_or(|b| v < b.value) {
            best = Some(Stg { value: v, mode: *m });
        }
    }
    Ok(best.expect("subset is non-empty"))
}

/// `|Z_s| / |Z_g|`.
pub fn scr(z_s: f64, z_g: f64) -> Result<f64, IndexError> {
    if !(z_s > 0.0) {
        return Err(IndexError::Threshold(format!("|Z_s| must be positive, got {z_s}")));
    }
    if !(z_g > 0.0) {
        return Err(IndexError::Threshold(format!("|Z_g| must be positive, got {z_g}")));
    }
    Ok(z_s / z_g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScrComparison {
    pub z_g: f64,
    pub z_s: f64,
    pub scr: f64,
    pub one_plus_scr: f64,
    /// Largest singular value of `[Y_G^-1 Y]_ii` at `s = j omega_base`.
    pub base_quantity: f64,
}

/// SCR of a single source on a single grid branch, beside the
/// base-frequency value of `[Y_G^-1 Y]_ii`. The two are reported, not
/// equated.
pub fn stg_scr_comparison(model: &SystemModel, i: usize) -> Result<ScrComparison, IndexError> {
    require_source(model, i)?;
    let sources = model.source_buses();
    let net = model.network();
    let grid: Vec<_> = net.branches().iter().filter(|b| matches!(b.to, BranchEnd::Source { .. })).collect();
    if sources.len() != 1 || grid.len() != 1 || net.branches().len() != 1 || grid[0].from != i {
        return Err(IndexError::Unsupported(
            "SCR comparison needs one source and one grid branch at its bus".into(),
        ));
    }
    let w = model.omega_base();
    let z_g = Complex64::new(grid[0].r, w * grid[0].l).norm();
    let z_s = 1.0 / model.source_rating(i).unwrap_or(1.0);
    let ratio = scr(z_s, z_g)?;
    let t = crate::network::source_voltage_transfer(model, i, i, Complex64::new(0.0, w))?;
    let base_quantity = t.singular_values().iter().cloned().fold(0.0, f64::max);
    Ok(ScrComparison { z_g, z_s, scr: ratio, one_plus_scr: 1.0 + ratio, base_quantity })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VdmEntry {
    pub source: usize,
    pub node: usize,
    pub mode: Mode,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StgEntry {
    pub source: usize,
    pub kind: Option<&'static str>,
    pub value: f64,
    pub mode: Mode,
    /// Advisory boundary for this source kind, if any.
    pub advisory: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexReport {
    pub bus_labels: Vec<String>,
    pub subset: ModeSubset,
    pub vdm: Vec<VdmEntry>,
    pub stg: Vec<StgEntry>,
    pub case_hash: Option<String>,
    /// Seconds since the Unix epoch.
    pub generated_at: Option<u64>,
}

/// VDM for every (source, node, mode in subset) and STG for every source.
pub fn compute_report(model: &SystemModel, subset: &ModeSubset) -> Result<IndexReport, IndexError> {
    if subset.modes.is_empty() {
        return Err(IndexError::EmptySubset);
    }
    let mut vdm_rows = Vec::new();
    let mut stg_rows = Vec::new();
    for i in model.source_buses() {
        let mut best: Option<(f64, Mode)> = None;
        for j in 0..model.n_buses() {
            for m in &subset.modes {
                let v = vdm(model, i, j, m.index)?;
                if i == j && best.is_none_or(|(b, _)| v < b) {
                    best = Some((v, *m));
                }
                vdm_rows.push(VdmEntry { source: i, node: j, mode: *m, value: v });
            }
        }
        let (value, mode) = best.expect("subset is non-empty");
        let kind = model.source_kind(i);
        let advisory = match kind {
            Some("gfm") => Some(STG_ADVISORY_GFM),
            Some("gfl") => Some(STG_ADVISORY_GFL),
            _ => None,
        };
        stg_rows.push(StgEntry { source: i, kind, value, mode, advisory });
    }
    Ok(IndexReport {
        bus_labels: model.bus_labels().to_vec(),
        subset: subset.clone(),
        vdm: vdm_rows,
        stg: stg_rows,
        case_hash: None,
        generated_at: None,
    })
}

/// Stable label of a mode in reports.
pub fn mode_id(m: &Mode) -> String {
    format!("mode{}", m.index)
}

fn mode_json(m: &Mode) -> Value {
    let mut o = Map::new();
    o.insert("id".into(), Value::String(mode_id(m)));
    o.insert("sigma".into(), json_num(m.sigma()));
    o.insert("omega".into(), json_num(m.omega()));
    o.insert("f_hz".into(), json_num(m.lambda.im / (2.0 * PI)));
    o.insert("zeta".into(), json_num(m.zeta));
    Value::Object(o)
}

impl IndexReport {
    pub fn to_json(&self) -> Value {
        let label = |i: usize| self.bus_labels[i].clone();
        let mut root = Map::new();
        if let Some(h) = &self.case_hash {
            root.insert("case_hash".into(), Value::String(h.clone()));
        }
        if let Some(t) = self.generated_at {
            root.insert("generated_at".into(), Value::Number(t.into()));
        }
        let th = &self.subset.thresholds;
        let mut t = Map::new();
        t.insert("zeta_max".into(), json_num(th.zeta_max));
        t.insert("f_max_hz".into(), json_num(th.f_max_hz));
        t.insert("sigma_floor".into(), json_num(th.sigma_floor));
        t.insert("include_real".into(), Value::Bool(th.include_real));
        root.insert("thresholds".into(), Value::Object(t));
        root.insert("modes".into(), Value::Array(self.subset.modes.iter().map(mode_json).collect()));

        let mut vdm = Map::new();
        for e in &self.vdm {
            let src = vdm.entry(label(e.source)).or_insert_with(|| Value::Object(Map::new()));
            let node = src
                .as_object_mut()
                .expect("object")
                .entry(label(e.node))
                .or_insert_with(|| Value::Object(Map::new()));
            node.as_object_mut().expect("object").insert(mode_id(&e.mode), json_num(e.value));
        }
        root.insert("vdm".into(), Value::Object(vdm));

        let mut stg = Map::new();
        for e in &self.stg {
            let mut o = Map::new();
            o.insert("value".into(), json_num(e.value));
            o.insert("mode".into(), Value::String(mode_id(&e.mode)));
            o.insert("kind".into(), e.kind.map_or(Value::Null, |k| Value::String(k.into())));
            match e.advisory {
                Some(a) => {
                    o.insert("advisory_threshold".into(), json_num(a));
                    o.insert("below_advisory".into(), Value::Bool(e.value < a));
                }
                None => {
                    o.insert("advisory_threshold".into(), Value::Null);
                }
            }
            stg.insert(label(e.source), Value::Object(o));
        }
        root.insert("stg".into(), Value::Object(stg));
        Value::Object(root)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per VDM cell, then one per STG value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,source,node,mode,sigma,f_hz,zeta,value\n");
        for e in &self.vdm {
            out.push_str(&format!(
                "vdm,{},{},{},{},{},{},{}\n",
                self.bus_labels[e.source],
                self.bus_labels[e.node],
                mode_id(&e.mode),
                fmt_num(e.mode.sigma()),
                fmt_num(e.mode.freq_hz()),
                fmt_num(e.mode.zeta),
                fmt_num(e.value)
            ));
        }
        for e in &self.stg {
            out.push_str(&format!(
                "stg,{},{},{},{},{},{},{}\n",
                self.bus_labels[e.source],
                self.bus_labels[e.source],
                mode_id(&e.mode),
                fmt_num(e.mode.sigma()),
                fmt_num(e.mode.freq_hz()),
                fmt_num(e.mode.zeta),
                fmt_num(e.value)
            ));
        }
        out
    }
}
