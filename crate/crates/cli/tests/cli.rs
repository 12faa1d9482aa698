use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gma_core::case::fixture;
use gma_core::format::fmt_num;
use gma_core::linalg::{self, CMat};
use gma_core::lintf::eigen_sensitivity_to_a;
use gma_core::network::{build_system, system_modes};
use nalgebra::DMatrix;
use nalgebra::Complex as C;
type Complex64 = C<f64>;
use serde_json::Value;

fn gma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gma")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gma(args);
    assert!(out.status.success(), "gma {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Rows of a CSV text, comments and header dropped.
fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or_else(|_| panic!("not a number: {s}"))
}

const RL_CASE: &str = r#"
[system]
f_base_hz = 50.0
s_base = 100.0

[[buses]]
label = "1"

[[branches]]
from = "1"
source_v = 1.0
r = 0.05
x = 0.2
"#;

const LC_CASE: &str = r#"
[system]
f_base_hz = 50.0
s_base = 100.0

[[buses]]
label = "1"
shunt_b = 0.3

[[branches]]
from = "1"
source_v = 1.0
r = 0.005
x = 0.3
"#;

/// Two identical converters hung symmetrically off one bus: the
/// antisymmetric modes cannot be seen from the middle bus.
const TWIN_CASE: &str = r#"
[system]
f_base_hz = 50.0
s_base = 100.0
power_flow = true

[[buses]]
label = "m"
shunt_b = 0.02

[[buses]]
label = "a"
shunt_b = 0.02

[[buses]]
label = "b"
shunt_b = 0.02

[[branches]]
from = "m"
source_v = 1.0
r = 0.01
x = 0.1

[[branches]]
from = "a"
to = "m"
r = 0.02
x = 0.15

[[branches]]
from = "b"
to = "m"
r = 0.02
x = 0.15

[[devices]]
bus = "a"
kind = "gfl"
p = 0.4

[[devices]]
bus = "b"
kind = "gfl"
p = 0.4
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn modes_lists_oscillatory_pairs_and_filters_band() {
    let out = ok(&["modes", "smib"]);
    let body: Vec<Vec<String>> = out
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    assert!(body.iter().any(|r| num(&r[2]) > 0.0));
    let band = ok(&["modes", "case14gma", "--band", "20:40"]);
    let fs: Vec<f64> = band.lines().skip(1).map(|l| num(l.split_whitespace().nth(3).unwrap()).abs()).collect();
    assert!(!fs.is_empty());
    assert!(fs.iter().all(|f| (20.0..=40.0).contains(f)), "{fs:?}");
}

#[test]
fn modes_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("modes.csv");
    ok(&["modes", "ring4", "--csv", path.to_str().unwrap()]);
    let text = fs::read_to_string(&path).unwrap();
    let m = build_system(&fixture("ring4").unwrap()).unwrap();
    let reports = system_modes(&m, None);
    let parsed = rows(&text);
    assert_eq!(parsed.len(), reports.len());
    for (row, rep) in parsed.iter().zip(&reports) {
        assert_eq!(row[0], rep.mode.index.to_string());
        assert_eq!(row[1], fmt_num(rep.mode.sigma()));
        // Re-parsing and re-formatting reproduces the text.
        for cell in &row[1..5] {
            assert_eq!(&fmt_num(num(cell)), cell);
        }
    }
}

#[test]
fn participation_columns_sum_to_one() {
    let m = build_system(&fixture("ring4").unwrap()).unwrap();
    for k in [0usize, 5, 11] {
        let out = ok(&["participate", "ring4", "--mode", &k.to_string()]);
        let r = rows(&out);
        assert_eq!(r.len(), m.whole().n());
        let re: f64 = r.iter().map(|x| num(&x[2])).sum();
        let im: f64 = r.iter().map(|x| num(&x[3])).sum();
        assert!((re - 1.0).abs() < 1e-7 && im.abs() < 1e-7, "mode {k}: {re} {im}");
    }
}

#[test]
fn top_participant_moves_the_mode_most() {
    // Participation is d lambda / d a_kk: nudge each diagonal entry and
    // see which one moves the mode furthest.
    let m = build_system(&fixture("ring4").unwrap()).unwrap();
    let sub = gma_core::indices::select_modes(&m.modes(), Default::default()).unwrap();
    let k = sub.modes[0].index;
    let lam = m.eigen().eigenvalues()[k];
    let out = ok(&["participate", "ring4", "--mode", &k.to_string(), "--top", "1"]);
    let top = rows(&out)[0][0].clone();
    let a = m.whole().a();
    let h = 1e-6;
    let moved = |s: usize| {
        let mut p = a.clone();
        p[(s, s)] += h * (1.0 + a[(s, s)].abs());
        let l = p
            .complex_eigenvalues()
            .iter()
            .copied()
            .min_by(|x, y| (x - lam).norm().total_cmp(&(y - lam).norm()))
            .unwrap();
        (l - lam).norm() / (h * (1.0 + a[(s, s)].abs()))
    };
    let best = (0..a.nrows()).max_by(|&x, &y| moved(x).total_cmp(&moved(y))).unwrap();
    assert_eq!(m.whole().state_labels()[best], top);
}

#[test]
fn full_state_gma_is_negated_a_sensitivity() {
    let m = build_system(&fixture("smib").unwrap()).unwrap();
    let k = 0;
    let out = ok(&["gma", "smib", "--mode", "0", "--full-state"]);
    let sens = eigen_sensitivity_to_a(m.eigen(), k).unwrap();
    let labels = m.whole().state_labels();
    let r = rows(&out);
    assert_eq!(r.len(), labels.len() * labels.len());
    let scale = linalg::fro(&sens);
    for row in r {
        let a = labels.iter().position(|l| *l == row[0]).unwrap();
        let b = labels.iter().position(|l| *l == row[1]).unwrap();
        let z = Complex64::new(num(&row[2]), num(&row[3]));
        assert!((z + sens[(a, b)]).norm() < 1e-7 * scale);
    }
}

#[test]
fn port_gma_matches_root_tracking() {
    let m = build_system(&fixture("smib").unwrap()).unwrap();
    let ss = m.whole();
    let k = 0;
    let lam = m.eigen().eigenvalues()[k];
    let out = ok(&["gma", "smib", "--mode", "0", "--inputs", "bus1.Id,bus1.Iq", "--outputs", "bus1.Ud,bus1.Uq"]);
    let r = rows(&out);
    let s = CMat::from_fn(2, 2, |a, b| Complex64::new(num(&r[2 * a + b][2]), num(&r[2 * a + b][3])));
    let bi = ss.b().columns(0, 2).into_owned();
    let co = ss.c().rows(0, 2).into_owned();
    let eps = 1e-7;
    for a in 0..2 {
        for b in 0..2 {
            let mut e = DMatrix::zeros(2, 2);
            e[(a, b)] = 1.0;
            let dir = &bi * e * &co;
            let near = |p: DMatrix<f64>| {
                p.complex_eigenvalues()
                    .iter()
                    .copied()
                    .min_by(|x, y| (x - lam).norm().total_cmp(&(y - lam).norm()))
                    .unwrap()
            };
            let fd = (near(ss.a() - &dir * eps) - near(ss.a() + &dir * eps)) / (2.0 * eps);
            assert!((fd - s[(a, b)]).norm() < 1e-3 * linalg::fro(&s), "({a},{b}) {fd} vs {}", s[(a, b)]);
        }
    }
}

#[test]
fn gma_refuses_a_mode_hidden_from_the_ports() {
    let dir = tempfile::tempdir().unwrap();
    let case = write(dir.path(), "twin.toml", TWIN_CASE);
    ok(&["modes", &case, "--csv", dir.path().join("m.csv").to_str().unwrap()]);
    let csv = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let (mut refused, mut accepted) = (0, 0);
    for row in rows(&csv) {
        let out = gma(&["gma", &case, "--mode", &row[0], "--inputs", "busm.Id,busm.Iq", "--outputs", "busm.Ud,busm.Uq"]);
        if out.status.success() {
            accepted += 1;
        } else {
            let err = String::from_utf8_lossy(&out.stderr);
            assert!(err.contains("refused") && err.contains("not"), "{err}");
            refused += 1;
        }
    }
    assert!(refused > 0 && accepted > 0, "refused {refused}, accepted {accepted}");
}

#[test]
fn rl_scan_is_flat_then_inductive() {
    let dir = tempfile::tempdir().unwrap();
    let case = write(dir.path(), "rl.toml", RL_CASE);
    let out = ok(&["scan", &case, "--pair", "1,1", "--fmin", "0.001", "--fmax", "100000", "--points", "9"]);
    let r = rows(&out);
    let db = |k: usize| 20.0 * num(&r[k][1]).log10();
    assert!((db(1) - db(0)).abs() < 0.01);
    assert!((num(&r[0][1]) - 0.05).abs() < 1e-4);
    assert!((db(8) - db(7) - 20.0).abs() < 0.01);
}

#[test]
fn scan_peak_matches_a_mode() {
    let dir = tempfile::tempdir().unwrap();
    let case = write(dir.path(), "lc.toml", LC_CASE);
    let out = ok(&["scan", &case, "--pair", "1,1", "--fmin", "1", "--fmax", "2000", "--points", "2000"]);
    let r = rows(&out);
    let k = (0..r.len()).max_by(|&a, &b| num(&r[a][1]).total_cmp(&num(&r[b][1]))).unwrap();
    let f = num(&r[k][0]);
    let step = num(&r[k + 1][0]) - f;
    let table = ok(&["modes", &case]);
    let near = table
        .lines()
        .skip(1)
        .map(|l| (num(l.split_whitespace().nth(3).unwrap()) - f).abs())
        .fold(f64::INFINITY, f64::min);
    assert!(near <= step, "peak {f} Hz, nearest mode {near} Hz away");
}

#[test]
fn scan_matches_direct_inverse() {
    let out = ok(&["scan", "ring4", "--pair", "3,1", "--fmin", "1", "--fmax", "500", "--points", "7"]);
    let m = build_system(&fixture("ring4").unwrap()).unwrap();
    for row in rows(&out) {
        let s = Complex64::new(0.0, 2.0 * PI * num(&row[0]));
        let z = m.y(s).unwrap().try_inverse().unwrap();
        let blk = linalg::block2(&z, 2, 0);
        for (c, (a, b)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
            let mag = num(&row[1 + 2 * c]);
            let ph = num(&row[2 + 2 * c]).to_radians();
            let got = Complex64::from_polar(mag, ph);
            assert!((got - blk[(*a, *b)]).norm() < 1e-7 * linalg::fro(&blk));
        }
    }
}

#[test]
fn indices_report_schema_sign_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let j1 = dir.path().join("a.json");
    let j2 = dir.path().join("b.json");
    let c1 = dir.path().join("a.csv");
    ok(&["indices", "ring4", "--no-timestamp", "--json", j1.to_str().unwrap(), "--csv", c1.to_str().unwrap()]);
    ok(&["indices", "ring4", "--no-timestamp", "--json", j2.to_str().unwrap()]);
    let t1 = fs::read_to_string(&j1).unwrap();
    assert_eq!(t1, fs::read_to_string(&j2).unwrap());
    let v: Value = serde_json::from_str(&t1).unwrap();
    let hash = v["case_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    assert!(v.get("generated_at").is_none());
    for key in ["thresholds", "modes", "vdm", "stg"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let modes = v["modes"].as_array().unwrap();
    assert!(!modes.is_empty());
    for md in modes {
        assert!(num(&md["sigma"].to_string()) < 0.0);
    }
    for (_, nodes) in v["vdm"].as_object().unwrap() {
        for (_, cells) in nodes.as_object().unwrap() {
            for (_, x) in cells.as_object().unwrap() {
                assert!(num(&x.to_string()) > 0.0);
            }
        }
    }
    let csv = fs::read_to_string(&c1).unwrap();
    assert!(rows(&csv).iter().all(|r| num(&r[7]) > 0.0));
    let stamped: Value = serde_json::from_str(&ok(&["indices", "ring4"])).unwrap();
    assert!(stamped["generated_at"].as_u64().is_some());
}

#[test]
fn indices_rank_the_three_converters() {
    let v: Value = serde_json::from_str(&ok(&["indices", "case14gma", "--no-timestamp"])).unwrap();
    let mode = v["modes"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|m| (25.0..=35.0).contains(&num(&m["f_hz"].to_string())))
        .min_by(|a, b| num(&a["zeta"].to_string()).total_cmp(&num(&b["zeta"].to_string())))
        .unwrap();
    let id = mode["id"].as_str().unwrap();
    let get = |j: &str| num(&v["vdm"]["6"][j][id].to_string());
    assert!(get("12") < get("13") && get("13") < get("11"));
}

#[test]
fn simulate_zero_step_is_flat_and_superposition_holds() {
    let zero = ok(&["simulate", "ring4", "--step-bus", "2", "--magnitude", "0", "--t-end", "0.2"]);
    for r in rows(&zero) {
        assert!(r[1..].iter().all(|x| num(x) == 0.0));
    }
    let one = rows(&ok(&["simulate", "ring4", "--step-bus", "2", "--magnitude", "0.1", "--t-end", "0.5"]));
    let two = rows(&ok(&["simulate", "ring4", "--step-bus", "2", "--magnitude", "0.2", "--t-end", "0.5"]));
    let scale = one.iter().flat_map(|r| r[1..].iter().map(|x| num(x).abs())).fold(0.0, f64::max);
    assert!(scale > 0.0);
    for (a, b) in one.iter().zip(&two) {
        for (x, y) in a[1..].iter().zip(&b[1..]) {
            assert!((2.0 * num(x) - num(y)).abs() < 1e-7 * scale);
        }
    }
}

#[test]
fn simulated_oscillation_peaks_at_least_damped_mode() {
    let m = build_system(&fixture("ring4").unwrap()).unwrap();
    let sub = gma_core::indices::select_modes(&m.modes(), Default::default()).unwrap();
    let f0 = sub.modes[0].freq_hz();
    let dt = 1e-3;
    let out = rows(&ok(&["simulate", "ring4", "--step-bus", "3", "--t-end", "6", "--dt", "0.001", "--step-time", "0"]));
    // Bus 3 voltage magnitude, final value removed.
    let col = 3 * 2 + 3;
    let v: Vec<f64> = out.iter().map(|r| num(&r[col])).collect();
    let fin = v[v.len() - 500..].iter().sum::<f64>() / 500.0;
    // Skip the first second so the heavily damped 2 Hz pair has died out.
    let x: Vec<f64> = v[1000..].iter().map(|y| y - fin).collect();
    let spectrum = |f: f64| {
        let w = 2.0 * PI * f * dt;
        let (mut re, mut im) = (0.0, 0.0);
        for (k, y) in x.iter().enumerate() {
            re += y * (w * k as f64).cos();
            im -= y * (w * k as f64).sin();
        }
        (re * re + im * im).sqrt()
    };
    let grid: Vec<f64> = (2..=400).map(|k| k as f64 * 0.25).collect();
    let peak = grid.iter().copied().max_by(|a, b| spectrum(*a).total_cmp(&spectrum(*b))).unwrap();
    assert!((peak - f0).abs() <= 0.5, "spectrum peak {peak} Hz, mode {f0} Hz");
}

fn samples_csv(poles: &[(Complex64, Complex64)], d: f64) -> String {
    let mut s = String::from("f_Hz,re_11,im_11\n");
    for k in 0..60 {
        let f = 0.01 * 10f64.powf(4.0 * k as f64 / 59.0);
        let jw = Complex64::new(0.0, 2.0 * PI * f);
        let mut v = Complex64::new(d, 0.0);
        for (p, r) in poles {
            v += r / (jw - p);
        }
        s.push_str(&format!("{f:.17e},{:.17e},{:.17e}\n", v.re, v.im));
    }
    s
}

#[test]
fn fit_recovers_one_pole() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "one.csv", &samples_csv(&[(Complex64::new(-1.0, 0.0), Complex64::new(1.0, 0.0))], 0.0));
    let v: Value = serde_json::from_str(&ok(&["fit", &path, "--order", "1"])).unwrap();
    let text = v.to_string();
    assert!(text.contains("rms_error"));
    let poles = v["poles"].as_array().unwrap();
    assert_eq!(poles.len(), 1);
    let p = poles[0].as_array().unwrap();
    assert!((num(&p[0].to_string()) + 1.0).abs() < 1e-8 && num(&p[1].to_string()).abs() < 1e-8);
    let r = &v["residues"][0];
    assert!((num(&r[0][0][0].to_string()) - 1.0).abs() < 1e-8, "{r}");
}

#[test]
fn fit_underfit_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let poles: Vec<(Complex64, Complex64)> = [(-1.0, 5.0), (-3.0, 40.0), (-10.0, 300.0)]
        .iter()
        .flat_map(|&(s, w)| {
            let p = Complex64::new(s, w);
            let r = Complex64::new(w, 0.3 * w);
            [(p, r), (p.conj(), r.conj())]
        })
        .collect();
    let path = write(dir.path(), "six.csv", &samples_csv(&poles, 0.5));
    let out_json = dir.path().join("fit.json");
    let out = gma(&["fit", &path, "--order", "2", "--max-rms", "1e-6", "--out", out_json.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!out_json.exists());
    let good = ok(&["fit", &path, "--order", "6", "--iters", "20", "--out", out_json.to_str().unwrap()]);
    assert!(good.is_empty());
    let v: Value = serde_json::from_str(&fs::read_to_string(&out_json).unwrap()).unwrap();
    assert!(num(&v["rms_error"].to_string()) < 1e-9);
}

#[test]
fn bad_inputs_exit_nonzero_without_files() {
    let dir = tempfile::tempdir().unwrap();
    let bad = RL_CASE.replace("r = 0.05", "r = 0.05\nresistance = 1.0");
    let case = write(dir.path(), "bad.toml", &bad);
    let csv = dir.path().join("modes.csv");
    let out = gma(&["modes", &case, "--csv", csv.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 13"), "{err}");
    assert!(!csv.exists());
    assert!(fs::read_dir(dir.path()).unwrap().count() == 1);

    let samples = write(dir.path(), "bad.csv", "f_Hz,re_11,im_11\n1.0,2.0,3.0\n2.0,x,1.0\n");
    let out = gma(&["fit", &samples]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    assert!(!gma(&["participate", "smib", "--mode", "999"]).status.success());
    assert!(!gma(&["scan", "smib", "--pair", "1,9"]).status.success());
    assert!(!gma(&["modes", "no_such_case"]).status.success());
}

#[test]
fn fixtures_are_listed_and_printed() {
    let list = ok(&["fixtures"]);
    assert_eq!(list, "smib\nring4\ncase14gma\n");
    assert!(ok(&["fixtures", "smib"]).contains("[system]"));
}
