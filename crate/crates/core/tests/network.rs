mod common;

use std::f64::consts::PI;

use gma_core::case::{fixture, FIXTURES};
use gma_core::devices::rl_branch_admittance;
use gma_core::indices::{modal_voltage_sensitivity, select_modes, sensitivity_from, stg, vdm, SubsetThresholds};
use gma_core::linalg::{self, CMat};
use gma_core::network::*;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn nearest_mode(m: &SystemModel, target: Complex64) -> Mode {
    m.modes()
        .into_iter()
        .min_by(|a, b| (a.lambda - target).norm().total_cmp(&(b.lambda - target).norm()))
        .unwrap()
}

fn least_damped_oscillatory(m: &SystemModel) -> Mode {
    let sub = select_modes(&m.modes(), SubsetThresholds::default()).unwrap();
    sub.modes[0]
}

#[test]
fn fixtures_load_and_balance() {
    for (name, _) in FIXTURES {
        let case = fixture(name).unwrap();
        let worst = case.power_mismatch().iter().map(|m| m.norm()).fold(0.0, f64::max);
        assert!(worst < 1e-10, "{name}: mismatch {worst:e}");
    }
}

#[test]
fn whole_system_identity_on_fixtures() {
    let mut r = common::rng(7);
    for (name, _) in FIXTURES {
        let m = build_system(&fixture(name).unwrap()).unwrap();
        let n = 2 * m.n_buses();
        for _ in 0..20 {
            let s = c(r.random_range(-20.0..20.0), r.random_range(-2000.0..2000.0));
            let prod = m.z(s).unwrap() * m.y(s).unwrap();
            let err = linalg::fro(&(prod - CMat::identity(n, n)));
            assert!(err < 1e-8, "{name} at {s}: {err:e}");
        }
    }
}

#[test]
fn determinant_vanishes_at_least_damped_modes() {
    for (name, _) in FIXTURES {
        let m = build_system(&fixture(name).unwrap()).unwrap();
        let reports = system_modes(&m, None);
        let mut worst: f64 = 0.0;
        for rep in reports.iter().filter(|r| r.mode.lambda.norm() > 1e-6).take(10) {
            assert!(rep.det_ok(), "{name}: {:?}", rep);
            worst = worst.max(rep.det_ratio.unwrap());
        }
        // Generic points sit orders of magnitude higher.
        for s in [c(-3.0, 77.0), c(-10.0, 500.0), c(1.0, 3000.0)] {
            assert!(m.det_ratio(s).unwrap() > 1e3 * worst, "{name} at {s}");
        }
    }
}

#[test]
fn modes_are_stable_and_conjugate_paired() {
    for (name, _) in FIXTURES {
        let m = build_system(&fixture(name).unwrap()).unwrap();
        let lams: Vec<Complex64> = m.modes().iter().map(|x| x.lambda).collect();
        let scale = lams.iter().map(|l| l.norm()).fold(1.0, f64::max);
        for l in &lams {
            assert!(l.re < 1e-8 * scale, "{name}: unstable {l}");
            if l.im.abs() > 1e-9 * scale {
                let partner = lams.iter().map(|k| (k - l.conj()).norm()).fold(f64::INFINITY, f64::min);
                assert!(partner < 1e-8 * scale, "{name}: {l} has no conjugate");
            }
        }
    }
}

#[test]
fn two_bus_stamp() {
    let w = 2.0 * PI * 50.0;
    let mut case = NetworkCase::new(w, 100.0);
    case.add_bus(Bus::new("1", 1.0, 0.0));
    case.add_bus(Bus::new("2", 1.0, 0.0));
    case.branches.push(Branch { from: 0, to: BranchEnd::Bus(1), r: 0.01, l: 0.1 / w, c: 0.0 });
    let yn = build_node_admittance(&case).unwrap();
    let s = c(0.3, 140.0);
    let y = yn.eval(s);
    let ybr = rl_branch_admittance(0.01, 0.1 / w, w, s);
    // Oracle: invert the branch impedance directly.
    let zbr = CMat::from_row_slice(2, 2, &[c(0.01, 0.0) + s * (0.1 / w), c(-0.1, 0.0), c(0.1, 0.0), c(0.01, 0.0) + s * (0.1 / w)]);
    let inv = zbr.try_inverse().unwrap();
    assert!(linalg::fro(&(&ybr - &inv)) < 1e-12);
    assert!(linalg::fro(&(linalg::block2(&y, 0, 0) - &inv)) < 1e-12);
    assert!(linalg::fro(&(linalg::block2(&y, 1, 1) - &inv)) < 1e-12);
    assert!(linalg::fro(&(linalg::block2(&y, 0, 1) + &inv)) < 1e-12);
    // Zero frequency: the base-frequency reactance in dq.
    let y0 = rl_branch_admittance(0.0, 0.1 / w, w, c(0.0, 0.0));
    let x = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(-0.1, 0.0), c(0.1, 0.0), c(0.0, 0.0)]);
    assert!(linalg::fro(&(y0 - x.try_inverse().unwrap())) < 1e-12);
}

#[test]
fn ring_without_shunts_obeys_kirchhoff() {
    let mut case = fixture("ring4").unwrap();
    case.loads.clear();
    for b in case.buses.iter_mut() {
        b.shunt_c = 0.0;
    }
    for br in case.branches.iter_mut() {
        br.c = 0.0;
    }
    let y = build_node_admittance(&case).unwrap().eval(c(1.0, 250.0));
    for i in 0..4 {
        let mut sum = CMat::zeros(2, 2);
        for j in 0..4 {
            sum += linalg::block2(&y, i, j);
        }
        assert!(linalg::fro(&sum) < 1e-12, "row {i}: {sum}");
    }
}

#[test]
fn source_admittance_placeholders() {
    let mut case = fixture("ring4").unwrap();
    let with = assemble_source_admittance(&case).unwrap();
    let s = c(-1.0, 90.0);
    let yg = with.eval(s).unwrap();
    for i in 0..4 {
        let blk = linalg::block2(&yg, i, i);
        let eps = linalg::fro(&(&blk - CMat::identity(2, 2) * c(case.epsilon, 0.0)));
        if i == 0 || i == 2 {
            assert!(eps > 1e-3, "bus {i} should carry a device");
        } else {
            assert!(eps == 0.0, "bus {i} should be a placeholder");
        }
        for j in (0..4).filter(|&j| j != i) {
            assert!(linalg::fro(&linalg::block2(&yg, i, j)) == 0.0);
        }
    }
    case.devices.clear();
    let none = assemble_source_admittance(&case).unwrap().eval(s).unwrap();
    assert!(linalg::fro(&(none - CMat::identity(8, 8) * c(case.epsilon, 0.0))) == 0.0);
}

#[test]
fn two_devices_on_one_bus_are_refused() {
    let mut case = fixture("ring4").unwrap();
    let mut extra = case.devices[1].clone();
    extra.bus = 0;
    case.devices.push(extra);
    assert!(build_system(&case).is_err());
}

#[test]
fn passive_branch_gives_rl_modes() {
    // One bus with a resistive load, fed from an ideal source through an
    // RL branch. The bus is algebraic, so the only modes are the branch
    // current's: -(R + R_par)/L +- j omega_base.
    let w = 2.0 * PI * 50.0;
    let (r, l, rl) = (0.02, 0.3 / w, 2.0);
    let mut case = NetworkCase::new(w, 100.0);
    case.add_bus(Bus::new("1", 1.0, 0.0));
    case.branches.push(Branch { from: 0, to: BranchEnd::Source { v: 1.0, theta: 0.0 }, r, l, c: 0.0 });
    case.loads.push(Load { bus: 0, r: rl, l: 0.0 });
    let m = build_system(&case).unwrap();
    let r_par = 1.0 / (1.0 / rl + case.epsilon);
    let sigma = -(r + r_par) / l;
    let mut lams: Vec<Complex64> = m.modes().iter().map(|x| x.lambda).collect();
    lams.sort_by(|a, b| b.im.total_cmp(&a.im));
    assert_eq!(lams.len(), 2);
    assert!((lams[0] - c(sigma, w)).norm() < 1e-9 * w, "{lams:?}");
    assert!((lams[1] - c(sigma, -w)).norm() < 1e-9 * w);
}

#[test]
fn rl_scan_is_flat_then_inductive() {
    let w = 2.0 * PI * 50.0;
    let (r, l) = (0.05, 0.2 / w);
    let mut case = NetworkCase::new(w, 100.0);
    case.add_bus(Bus::new("1", 1.0, 0.0));
    case.branches.push(Branch { from: 0, to: BranchEnd::Source { v: 1.0, theta: 0.0 }, r, l, c: 0.0 });
    let m = build_system(&case).unwrap();
    let scan = impedance_scan(&m, 0, 0, &[1e-3, 1e-2, 1e4, 1e5]).unwrap();
    let db = |p: &ScanPoint| 20.0 * p.z[(0, 0)].norm().log10();
    assert!((db(&scan[0]) - db(&scan[1])).abs() < 0.01);
    assert!((scan[0].z[(0, 0)].norm() - r).abs() < 1e-3 * r);
    assert!((db(&scan[3]) - db(&scan[2]) - 20.0).abs() < 0.01);
}

#[test]
fn scan_peak_sits_at_a_light_mode() {
    // Bus capacitor behind an RL branch: a lightly damped LC resonance,
    // which the dq frame splits into two modes.
    let w = 2.0 * PI * 50.0;
    let mut case = NetworkCase::new(w, 100.0);
    case.add_bus(Bus { shunt_c: 0.3 / w, ..Bus::new("1", 1.0, 0.0) });
    case.branches.push(Branch { from: 0, to: BranchEnd::Source { v: 1.0, theta: 0.0 }, r: 0.005, l: 0.3 / w, c: 0.0 });
    let m = build_system(&case).unwrap();
    let grid = log_grid(1.0, 2000.0, 2000);
    let scan = impedance_scan(&m, 0, 0, &grid).unwrap();
    let k = (0..scan.len()).max_by(|&a, &b| scan[a].z[(0, 0)].norm().total_cmp(&scan[b].z[(0, 0)].norm())).unwrap();
    let step = grid[k + 1] - grid[k];
    let near = m
        .modes()
        .iter()
        .filter(|x| x.lambda.im > 0.0)
        .map(|x| (x.freq_hz() - grid[k]).abs())
        .fold(f64::INFINITY, f64::min);
    assert!(near <= step, "peak {} Hz, nearest mode {near} Hz away", grid[k]);
}

#[test]
fn source_voltage_transfer_blocks() {
    let m = build_system(&fixture("ring4").unwrap()).unwrap();
    let s = c(-2.0, 60.0);
    let full = linalg::solve(&m.y_g(s).unwrap(), &m.y(s).unwrap()).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let blk = source_voltage_transfer(&m, i, j, s).unwrap();
            assert!(linalg::fro(&(blk - linalg::block2(&full, i, j))) < 1e-10 * linalg::fro(&full));
        }
    }
}

#[test]
fn stiff_source_pins_its_bus() {
    // A GFL with a very fast current loop looks like a current source; a
    // stiff voltage source is an SG with tiny reactance behind it.
    let mut case = fixture("smib").unwrap();
    let mut ratio = Vec::new();
    for xd in [0.3, 0.03, 0.003] {
        case.devices[0].kind = DeviceKind::Sg(gma_core::devices::SgParams { xd_prime: xd, rs: xd / 100.0, ..Default::default() });
        let m = build_system(&case).unwrap();
        let t = source_voltage_transfer(&m, 0, 0, c(0.0, 3000.0)).unwrap();
        ratio.push(linalg::fro(&(t - CMat::identity(2, 2))));
    }
    assert!(ratio[1] < 0.2 * ratio[0] && ratio[2] < 0.2 * ratio[1], "{ratio:?}");
    assert!(ratio[2] < 0.02, "{ratio:?}");
}

#[test]
fn fourteen_bus_has_subsynchronous_mode() {
    let m = build_system(&fixture("case14gma").unwrap()).unwrap();
    let band = system_modes(&m, Some((25.0, 35.0)));
    assert!(band.iter().any(|r| r.mode.lambda.im > 0.0 && r.mode.sigma() < 0.0 && r.mode.zeta < 0.2));
    // Default thresholds keep the least-damped oscillatory pair.
    let sub = select_modes(&m.modes(), SubsetThresholds::default()).unwrap();
    let least = m
        .modes()
        .into_iter()
        .filter(|x| x.lambda.im > 0.0 && x.freq_hz() <= 100.0)
        .min_by(|a, b| a.zeta.total_cmp(&b.zeta))
        .unwrap();
    assert!(sub.modes.iter().any(|x| x.index == least.index));
}

#[test]
fn epsilon_sweep_leaves_source_indices_unchanged() {
    let base = fixture("case14gma").unwrap();
    let m0 = build_system(&base).unwrap();
    let target = least_damped_oscillatory(&m0).lambda;
    let sources = m0.source_buses();
    let mut tables = Vec::new();
    for eps in [1e-5, 1e-6, 1e-7] {
        let mut case = base.clone();
        case.epsilon = eps;
        let m = build_system(&case).unwrap();
        let k = nearest_mode(&m, target).index;
        let mut row = Vec::new();
        for &i in &sources {
            for &j in &sources {
                row.push(vdm(&m, i, j, k).unwrap());
            }
        }
        tables.push(row);
    }
    for t in &tables[1..] {
        for (a, b) in t.iter().zip(&tables[0]) {
            assert!((a - b).abs() < 1e-3 * b.abs(), "{a} vs {b}");
        }
    }
}

#[test]
fn placeholder_source_contribution_vanishes_with_epsilon() {
    // The block of a placeholder bus is eps * I, so its sensitivity is
    // eps times a residue that does not blow up as eps shrinks.
    let mut case = fixture("ring4").unwrap();
    let target = least_damped_oscillatory(&build_system(&case).unwrap()).lambda;
    for eps in [1e-6, 1e-9] {
        case.epsilon = eps;
        let m = build_system(&case).unwrap();
        let k = nearest_mode(&m, target).index;
        let lam = m.eigen().eigenvalues()[k];
        for i in [1usize, 3] {
            assert!(matches!(
                modal_voltage_sensitivity(&m, i, 0, k),
                Err(gma_core::indices::IndexError::NotSource(_))
            ));
            let yg = m.sources().block(i, lam).unwrap();
            for j in 0..4 {
                let res = gma_core::indices::z_residue(&m, j, i, k).unwrap();
                let s = linalg::fro(&sensitivity_from(&yg, &res));
                assert!((s - eps * linalg::fro(&res)).abs() < 1e-12 * s);
                assert!(s < 10.0 * eps, "({i},{j}): {s}");
                if eps <= 1e-9 {
                    assert!(s < 1e-8);
                }
            }
        }
    }
}

/// Root of `det(Y(s) + delta * P(s))` near `start` by the secant method.
fn track_root(f: impl Fn(Complex64) -> Complex64, start: Complex64) -> Complex64 {
    let h = 1e-6 * (1.0 + start.norm());
    let (mut x0, mut x1) = (start, start + h);
    let (mut f0, mut f1) = (f(x0), f(x1));
    for _ in 0..60 {
        if f1 == f0 {
            break;
        }
        let x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
        x0 = x1;
        f0 = f1;
        x1 = x2;
        f1 = f(x1);
        if (x1 - x0).norm() < 1e-14 * (1.0 + x1.norm()) {
            break;
        }
    }
    x1
}

#[test]
fn modal_voltage_sensitivity_matches_root_tracking() {
    // Perturb [Y_G^-1 Y]_ij entry (a, b) by delta, i.e. add Y_Gi E_ab delta
    // to block (i, j) of Y, and follow the root of det Y.
    let m = build_system(&fixture("ring4").unwrap()).unwrap();
    let k = least_damped_oscillatory(&m).index;
    let lam = m.eigen().eigenvalues()[k];
    let delta = 1e-6;
    for (i, j) in [(0usize, 0usize), (0, 2), (2, 1), (2, 2)] {
        let s = modal_voltage_sensitivity(&m, i, j, k).unwrap();
        for (a, b) in [(0usize, 0usize), (0, 1), (1, 0), (1, 1)] {
            let shifted = |sgn: f64| {
                let f = |x: Complex64| {
                    let mut y = m.y(x).unwrap();
                    let g = m.sources().block(i, x).unwrap();
                    for r in 0..2 {
                        y[(2 * i + r, 2 * j + b)] += g[(r, a)] * (sgn * delta);
                    }
                    linalg::det(&y) / linalg::det(&m.y(lam + c(0.0, 1.0)).unwrap())
                };
                track_root(f, lam)
            };
            let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * delta);
            let rel = (fd - s[(a, b)]).norm() / linalg::fro(&s);
            assert!(rel < 1e-3, "({i},{j}) entry ({a},{b}): fd {fd} vs {}", s[(a, b)]);
        }
    }
}

#[test]
fn sign_rule_and_stg_min_on_fixtures() {
    for (name, _) in FIXTURES {
        let m = build_system(&fixture(name).unwrap()).unwrap();
        // The SMIB fixture has nothing below zeta = 0.2.
        let th = SubsetThresholds { zeta_max: 0.5, ..Default::default() };
        let sub = select_modes(&m.modes(), th).unwrap();
        assert!(!sub.modes.is_empty());
        for i in m.source_buses() {
            for j in 0..m.n_buses() {
                for md in &sub.modes {
                    let v = vdm(&m, i, j, md.index).unwrap();
                    assert!(v > 0.0, "{name} ({i},{j}) {v}");
                }
            }
            let g = stg(&m, i, &sub).unwrap();
            for md in &sub.modes {
                assert!(g.value <= vdm(&m, i, i, md.index).unwrap());
            }
            assert_eq!(g.value, vdm(&m, i, i, g.mode.index).unwrap());
        }
    }
}

#[test]
fn indices_do_not_depend_on_power_base() {
    // Doubling S_base doubles every per-unit impedance and halves every
    // per-unit power and admittance; the physical system is the same.
    let a = fixture("ring4").unwrap();
    let mut b = a.clone();
    let k = 2.0;
    b.s_base_mva *= k;
    b.epsilon /= k;
    for br in b.branches.iter_mut() {
        br.r *= k;
        br.l *= k;
        br.c /= k;
    }
    for ld in b.loads.iter_mut() {
        ld.r *= k;
        ld.l *= k;
    }
    for bus in b.buses.iter_mut() {
        bus.shunt_c /= k;
    }
    for d in b.devices.iter_mut() {
        d.p /= k;
        d.q /= k;
    }
    let ma = build_system(&a).unwrap();
    let mb = build_system(&b).unwrap();
    let ka = least_damped_oscillatory(&ma);
    let kb = nearest_mode(&mb, ka.lambda);
    assert!((ka.lambda - kb.lambda).norm() < 1e-8 * ka.lambda.norm());
    for i in ma.source_buses() {
        for j in 0..4 {
            let va = vdm(&ma, i, j, ka.index).unwrap();
            let vb = vdm(&mb, i, j, kb.index).unwrap();
            assert!((va - vb).abs() < 1e-7 * va, "({i},{j}) {va} vs {vb}");
        }
    }
}

#[test]
fn vdm_scales_with_damping() {
    let m = build_system(&fixture("ring4").unwrap()).unwrap();
    let k = least_damped_oscillatory(&m).index;
    let s = modal_voltage_sensitivity(&m, 0, 2, k).unwrap();
    let sigma = m.eigen().eigenvalues()[k].re;
    let v1 = gma_core::indices::vdm_from(sigma, &s);
    let v2 = gma_core::indices::vdm_from(2.0 * sigma, &s);
    assert!((v2 - 2.0 * v1).abs() < 1e-14 * v1);
    assert!(gma_core::indices::vdm_from(-sigma, &s) < 0.0);
    assert_eq!(gma_core::indices::vdm_from(sigma, &DMatrix::zeros(2, 2)), f64::INFINITY);
}
