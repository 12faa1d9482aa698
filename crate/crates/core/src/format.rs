//! Fixed scientific number formatting shared by the CSV and JSON writers.

use serde_json::{Number, Value};

/// Nine significant digits in scientific notation with a signed exponent
/// (`3.65000000e-1`, `1.20000000e+2`); non-finite values as `inf`, `-inf`,
/// `nan`.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        let s = format!("{x:.8e}");
        match s.split_once('e') {
            Some((m, e)) if !e.starts_with('-') => format!("{m}e+{e}"),
            _ => s,
        }
    } else if x > 0.0 {
        "inf".into()
    } else if x < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

/// JSON number carrying the formatted text. Non-finite values become strings.
pub fn json_num(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(fmt_num(x).parse::<Number>().expect("formatted float is a JSON number"))
    } else {
        Value::String(fmt_num(x))
    }
}

/// Reformat every float in a JSON tree. Integers are kept.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => json_num(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}
