//! Thin browser bindings. Every entry point takes the case file text and
//! returns JSON, so the page needs no state of its own on the Rust side.

use std::path::Path;

use gma_core::case::{parse_case, FIXTURES};
use gma_core::indices::{compute_report, select_modes, SubsetThresholds};
use gma_core::network::{build_system, impedance_scan, log_grid, system_modes, SystemModel};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn model(text: &str) -> Result<SystemModel, String> {
    let case = parse_case(text, Path::new(".")).map_err(|e| e.to_string())?;
    build_system(&case).map_err(|e| e.to_string())
}

/// Bundled case names and their text.
pub fn fixtures() -> Value {
    Value::Object(FIXTURES.iter().map(|(n, t)| (n.to_string(), json!(t))).collect())
}

/// Oscillatory modes with positive frequency, least damped first.
pub fn modes(text: &str) -> Result<Value, String> {
    let m = model(text)?;
    let rows: Vec<Value> = system_modes(&m, None)
        .iter()
        .filter(|r| r.mode.omega() > 0.0)
        .map(|r| {
            json!({
                "k": r.mode.index,
                "sigma": r.mode.sigma(),
                "f_hz": r.mode.freq_hz(),
                "zeta": r.mode.zeta,
            })
        })
        .collect();
    Ok(json!({ "buses": m.bus_labels(), "modes": rows }))
}

/// `|Z_ji|` of the dd and qq channels in dB over a log grid.
pub fn scan(text: &str, to: &str, from: &str, fmin: f64, fmax: f64, points: usize) -> Result<Value, String> {
    if !(fmin > 0.0 && fmax > fmin) || points < 2 {
        return Err("need 0 < fmin < fmax and at least two points".into());
    }
    let m = model(text)?;
    let j = m.bus_index(to).map_err(|e| e.to_string())?;
    let i = m.bus_index(from).map_err(|e| e.to_string())?;
    let pts = impedance_scan(&m, j, i, &log_grid(fmin, fmax, points)).map_err(|e| e.to_string())?;
    let db = |z: f64| 20.0 * z.max(1e-300).log10();
    Ok(json!({
        "f_hz": pts.iter().map(|p| p.f_hz).collect::<Vec<_>>(),
        "dd_db": pts.iter().map(|p| db(p.z[(0, 0)].norm())).collect::<Vec<_>>(),
        "qq_db": pts.iter().map(|p| db(p.z[(1, 1)].norm())).collect::<Vec<_>>(),
    }))
}

/// Index report for the modes picked by the two thresholds.
pub fn indices(text: &str, zeta_max: f64, f_max_hz: f64) -> Result<Value, String> {
    let m = model(text)?;
    let th = SubsetThresholds { zeta_max, f_max_hz, ..Default::default() };
    let subset = select_modes(&m.modes(), th).map_err(|e| e.to_string())?;
    let report = compute_report(&m, &subset).map_err(|e| e.to_string())?;
    Ok(report.to_json())
}

fn js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = fixtures)]
pub fn fixtures_js() -> String {
    fixtures().to_string()
}

#[wasm_bindgen(js_name = modes)]
pub fn modes_js(text: &str) -> Result<String, JsError> {
    js(modes(text))
}

#[wasm_bindgen(js_name = scan)]
pub fn scan_js(text: &str, to: &str, from: &str, fmin: f64, fmax: f64, points: usize) -> Result<String, JsError> {
    js(scan(text, to, from, fmin, fmax, points))
}

#[wasm_bindgen(js_name = indices)]
pub fn indices_js(text: &str, zeta_max: f64, f_max_hz: f64) -> Result<String, JsError> {
    js(indices(text, zeta_max, f_max_hz))
}
