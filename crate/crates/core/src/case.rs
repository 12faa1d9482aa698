//! TOML case files.
//!
//! ```toml
//! [system]
//! f_base_hz = 50.0      # or omega_base (rad/s)
//! s_base = 100.0        # MVA
//!
//! [[buses]]
//! label = "1"
//! v = 1.02
//! theta_deg = 0.0
//!
//! [[branches]]
//! from = "1"
//! source_v = 1.0        # far end is an ideal source
//! r = 0.01
//! x = 0.2
//!
//! [[devices]]
//! bus = "1"
//! kind = "gfl"
//! p = 0.5
//! params = { current_bw_hz = 300.0 }
//! ```
//!
//! With `power_flow = true` in `[system]` the bus voltages and device
//! powers are starting values and setpoints for a Newton power flow (see
//! `NetworkCase::solve_power_flow`); otherwise they are used as given.
//!
//! Per-unit quantities are on the system base. Reactance `x` and
//! susceptance `b` are at the base frequency; `l` and `c` are the per-unit
//! inductance and capacitance (`x = omega_base * l`). Loads are constant
//! impedances given either as `r` plus `l`/`x` or as the power `p`, `q`
//! drawn at the bus voltage. Data devices read admittance samples measured
//! in a frame aligned with their bus voltage.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::devices::{admittance_from_samples, DataFitOptions, GflParams, GfmParams, SgParams};
use crate::network::{Branch, BranchEnd, Bus, Device, DeviceKind, Load, NetworkCase, NetworkError};
use crate::vectorfit::read_samples_csv;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("{0}")]
    Syntax(String),
    #[error("line {line}: {msg}")]
    At { line: usize, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Label {
    Text(String),
    Int(i64),
}

impl Label {
    fn text(&self) -> String {
        match self {
            Label::Text(s) => s.clone(),
            Label::Int(i) => i.to_string(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    system: Spanned<RawSystem>,
    #[serde(default)]
    buses: Vec<Spanned<RawBus>>,
    #[serde(default)]
    branches: Vec<Spanned<RawBranch>>,
    #[serde(default)]
    loads: Vec<Spanned<RawLoad>>,
    #[serde(default)]
    devices: Vec<Spanned<RawDevice>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[allow(dead_code)]
    name: Option<String>,
    omega_base: Option<f64>,
    f_base_hz: Option<f64>,
    s_base: f64,
    v_base_kv: Option<f64>,
    epsilon: Option<f64>,
    #[serde(default)]
    power_flow: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBus {
    label: Label,
    #[serde(default = "one")]
    v: f64,
    theta: Option<f64>,
    theta_deg: Option<f64>,
    #[serde(default)]
    shunt_c: f64,
    shunt_b: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBranch {
    from: Label,
    to: Option<Label>,
    source_v: Option<f64>,
    source_theta: Option<f64>,
    source_theta_deg: Option<f64>,
    #[serde(default)]
    r: f64,
    l: Option<f64>,
    x: Option<f64>,
    c: Option<f64>,
    b: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoad {
    bus: Label,
    r: Option<f64>,
    l: Option<f64>,
    x: Option<f64>,
    p: Option<f64>,
    q: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDevice {
    bus: Label,
    kind: String,
    #[serde(default)]
    p: f64,
    #[serde(default)]
    q: f64,
    params: Option<toml::Table>,
    samples: Option<String>,
    order: Option<usize>,
    iterations: Option<usize>,
    max_relative_rms: Option<f64>,
}

struct Locator<'a> {
    text: &'a str,
}

impl Locator<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        let end = span.start.min(self.text.len());
        self.text[..end].matches('\n').count() + 1
    }

    fn err(&self, span: Range<usize>, msg: impl Into<String>) -> CaseError {
        CaseError::At { line: self.line(span), msg: msg.into() }
    }
}

fn pick(
    loc: &Locator,
    span: &Range<usize>,
    a: Option<f64>,
    b: Option<f64>,
    names: (&str, &str),
    scale_b: f64,
) -> Result<Option<f64>, CaseError> {
    match (a, b) {
        (Some(_), Some(_)) => Err(loc.err(span.clone(), format!("give either `{}` or `{}`, not both", names.0, names.1))),
        (Some(v), None) => Ok(Some(v)),
        (None, Some(v)) => Ok(Some(v * scale_b)),
        (None, None) => Ok(None),
    }
}

/// Parse a case from TOML text. Relative sample-file paths resolve against
/// `base_dir`.
pub fn parse_case(text: &str, base_dir: &Path) -> Result<NetworkCase, CaseError> {
    let raw: RawCase = toml::from_str(text).map_err(|e| CaseError::Syntax(e.to_string().trim_end().to_string()))?;
    let loc = Locator { text };

    let sys = raw.system.get_ref();
    let sys_span = raw.system.span();
    let omega_base = match (sys.omega_base, sys.f_base_hz) {
        (Some(w), None) => w,
        (None, Some(f)) => 2.0 * std::f64::consts::PI * f,
        _ => return Err(loc.err(sys_span, "give exactly one of `omega_base` or `f_base_hz`")),
    };
    if !(omega_base > 0.0 && omega_base.is_finite()) || !(sys.s_base > 0.0 && sys.s_base.is_finite()) {
        return Err(loc.err(sys_span, "base frequency and power must be positive"));
    }
    let mut case = NetworkCase::new(omega_base, sys.s_base);
    if let Some(v) = sys.v_base_kv {
        case.v_base_kv = v;
    }
    if let Some(e) = sys.epsilon {
        if !(e > 0.0) {
            return Err(loc.err(sys_span, "`epsilon` must be positive"));
        }
        case.epsilon = e;
    }

    for b in &raw.buses {
        let span = b.span();
        let b = b.get_ref();
        let label = b.label.text();
        if case.buses.iter().any(|x| x.label == label) {
            return Err(loc.err(span, format!("duplicate bus label `{label}`")));
        }
        let theta = pick(&loc, &span, b.theta, b.theta_deg, ("theta", "theta_deg"), 1f64.to_radians())?.unwrap_or(0.0);
        let shunt =
            pick(&loc, &span, Some(b.shunt_c).filter(|c| *c != 0.0), b.shunt_b, ("shunt_c", "shunt_b"), 1.0 / omega_base)?;
        let mut bus = Bus::new(label, b.v, theta);
        bus.shunt_c = shunt.unwrap_or(0.0);
        case.add_bus(bus);
    }

    let find = |label: &Label, span: Range<usize>| {
        let l = label.text();
        case.bus_index(&l).map_err(|_| loc.err(span, format!("unknown bus `{l}`")))
    };

    let mut branches = Vec::new();
    for br in &raw.branches {
        let span = br.span();
        let b = br.get_ref();
        let from = find(&b.from, span.clone())?;
        let to = match (&b.to, b.source_v) {
            (Some(t), None) => {
                if b.source_theta.is_some() || b.source_theta_deg.is_some() {
                    return Err(loc.err(span, "`source_theta` needs `source_v`"));
                }
                BranchEnd::Bus(find(t, span.clone())?)
            }
            (None, Some(v)) => {
                let theta =
                    pick(&loc, &span, b.source_theta, b.source_theta_deg, ("source_theta", "source_theta_deg"), 1f64.to_radians())?
                        .unwrap_or(0.0);
                BranchEnd::Source { v, theta }
            }
            _ => return Err(loc.err(span, "a branch needs exactly one of `to` or `source_v`")),
        };
        let l = pick(&loc, &span, b.l, b.x, ("l", "x"), 1.0 / omega_base)?.unwrap_or(0.0);
        let c = pick(&loc, &span, b.c, b.b, ("c", "b"), 1.0 / omega_base)?.unwrap_or(0.0);
        branches.push(Branch { from, to, r: b.r, l, c });
    }

    let mut loads = Vec::new();
    for ld in &raw.loads {
        let span = ld.span();
        let d = ld.get_ref();
        let bus = find(&d.bus, span.clone())?;
        let (r, l) = match (d.r, d.p.is_some() || d.q.is_some()) {
            (Some(r), false) => (r, pick(&loc, &span, d.l, d.x, ("l", "x"), 1.0 / omega_base)?.unwrap_or(0.0)),
            (None, true) => {
                if d.l.is_some() || d.x.is_some() {
                    return Err(loc.err(span, "a power load takes no `l` or `x`"));
                }
                let (p, q) = (d.p.unwrap_or(0.0), d.q.unwrap_or(0.0));
                let s2 = p * p + q * q;
                if p < 0.0 || q < 0.0 || s2 == 0.0 {
                    return Err(loc.err(span, "power loads need p >= 0, q >= 0 (inductive), not both zero"));
                }
                let v2 = case.buses[bus].v.powi(2);
                (v2 * p / s2, v2 * q / s2 / omega_base)
            }
            _ => return Err(loc.err(span, "a load needs either `r` (with `l`/`x`) or `p`/`q`")),
        };
        loads.push(Load { bus, r, l });
    }

    let mut devices = Vec::new();
    for dv in &raw.devices {
        let span = dv.span();
        let d = dv.get_ref();
        let bus = find(&d.bus, span.clone())?;
        let data_only = d.samples.is_some() || d.order.is_some() || d.iterations.is_some() || d.max_relative_rms.is_some();
        if data_only && d.kind != "data" {
            return Err(loc.err(span, format!("`samples`, `order`, `iterations` and `max_relative_rms` belong to data devices, not `{}`", d.kind)));
        }
        let params = toml::Value::Table(d.params.clone().unwrap_or_default());
        let bad = |e: toml::de::Error| loc.err(span.clone(), format!("{} params: {}", d.kind, e.message()));
        let kind = match d.kind.as_str() {
            "gfl" => DeviceKind::Gfl(params.try_into::<GflParams>().map_err(bad)?),
            "gfm" => DeviceKind::Gfm(params.try_into::<GfmParams>().map_err(bad)?),
            "sg" => DeviceKind::Sg(params.try_into::<SgParams>().map_err(bad)?),
            "data" => {
                if d.params.is_some() {
                    return Err(loc.err(span, "data devices take no `params`"));
                }
                let file = d.samples.as_ref().ok_or_else(|| loc.err(span.clone(), "data device needs `samples`"))?;
                let path: PathBuf = base_dir.join(file);
                let fh = std::fs::File::open(&path)
                    .map_err(|e| CaseError::Io { path: path.display().to_string(), msg: e.to_string() })?;
                let samples = read_samples_csv(fh)
                    .map_err(|e| CaseError::Io { path: path.display().to_string(), msg: e.to_string() })?;
                let defaults = DataFitOptions::default();
                let opts = DataFitOptions {
                    iterations: d.iterations.unwrap_or(defaults.iterations),
                    max_relative_rms: d.max_relative_rms.unwrap_or(defaults.max_relative_rms),
                    ..defaults
                };
                let local = admittance_from_samples(&samples, d.order.unwrap_or(8), &opts, case.base())
                    .map_err(|e| loc.err(span.clone(), format!("data device: {e}")))?;
                let y = local
                    .rotated(case.buses[bus].theta)
                    .map_err(|e| loc.err(span.clone(), format!("data device: {e}")))?;
                DeviceKind::Data(y)
            }
            other => return Err(loc.err(span, format!("unknown device kind `{other}` (expected gfl, gfm, sg or data)"))),
        };
        devices.push(Device { bus, kind, p: d.p, q: d.q });
    }

    case.branches = branches;
    case.loads = loads;
    case.devices = devices;
    case.validate()?;
    if sys.power_flow {
        case.solve_power_flow()?;
    }
    Ok(case)
}

/// Read and parse a case file.
pub fn load_case(path: &Path) -> Result<NetworkCase, CaseError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CaseError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    parse_case(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Bundled cases by name: `smib`, `ring4`, `case14gma`.
pub const FIXTURES: [(&str, &str); 3] = [
    ("smib", include_str!("../fixtures/smib.toml")),
    ("ring4", include_str!("../fixtures/ring4.toml")),
    ("case14gma", include_str!("../fixtures/case14gma.toml")),
];

pub fn fixture_text(name: &str) -> Option<&'static str> {
    FIXTURES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Parse a bundled case.
pub fn fixture(name: &str) -> Result<NetworkCase, CaseError> {
    let text = fixture_text(name).ok_or_else(|| CaseError::Io { path: name.into(), msg: "no such bundled case".into() })?;
    parse_case(text, Path::new("."))
}

/// Hex SHA-256 of the case text, used to tag reports.
pub fn case_hash(text: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(text.as_bytes()))
}
