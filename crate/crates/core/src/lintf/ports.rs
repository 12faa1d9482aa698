use nalgebra::DMatrix;
use num_complex::Complex64;

use super::eigen::{eigendecompose, EigenSystem};
use super::statespace::resolvent_times;
use super::{LinError, StateSpace, CTRB_OBSV_RTOL};
use crate::linalg::{self, CMat};

/// Square input/output port selection on a state-space model:
/// `G(s) = C1 (sI - A)^-1 B1 + D1`.
///
/// Plain index selection picks columns of `B` and rows of `C`; general
/// selections may use arbitrary real combinations of states or signals.
#[derive(Debug, Clone, PartialEq)]
pub struct PortSelection {
    b1: DMatrix<f64>,
    c1: DMatrix<f64>,
    d1: DMatrix<f64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl PortSelection {
    /// Select inputs and outputs of `ss` by index.
    pub fn indices(ss: &StateSpace, inputs: &[usize], outputs: &[usize]) -> Result<Self, LinError> {
        if inputs.len() != outputs.len() {
            return Err(LinError::Ports(format!(
                "{} inputs vs {} outputs; the transfer matrix must be square",
                inputs.len(),
                outputs.len()
            )));
        }
        if inputs.is_empty() {
            return Err(LinError::Ports("empty selection".into()));
        }
        let sub = ss.select(inputs, outputs)?;
        Ok(Self {
            b1: sub.b().clone(),
            c1: sub.c().clone(),
            d1: sub.d().clone(),
            inputs: sub.input_labels().to_vec(),
            outputs: sub.output_labels().to_vec(),
        })
    }

    /// Select inputs and outputs of `ss` by label.
    pub fn labels(ss: &StateSpace, inputs: &[&str], outputs: &[&str]) -> Result<Self, LinError> {
        let find = |labels: &[String], want: &str, kind: &str| {
            labels
                .iter()
                .position(|l| l == want)
                .ok_or_else(|| LinError::Ports(format!("unknown {kind} `{want}`")))
        };
        let ins = inputs
            .iter()
            .map(|l| find(ss.input_labels(), l, "input"))
            .collect::<Result<Vec<_>, _>>()?;
        let outs = outputs
            .iter()
            .map(|l| find(ss.output_labels(), l, "output"))
            .collect::<Result<Vec<_>, _>>()?;
        Self::indices(ss, &ins, &outs)
    }

    /// `B1 = C1 = I`, `D1 = 0`: the resolvent `(sI - A)^-1`.
    pub fn full_state(ss: &StateSpace) -> Self {
        let n = ss.n();
        Self {
            b1: DMatrix::identity(n, n),
            c1: DMatrix::identity(n, n),
            d1: DMatrix::zeros(n, n),
            inputs: ss.state_labels().iter().map(|l| format!("{l}(0)")).collect(),
            outputs: ss.state_labels().to_vec(),
        }
    }

    /// Linear combinations of the model's inputs and outputs:
    /// `B1 = B W_in`, `C1 = W_out C`, `D1 = W_out D W_in`.
    pub fn weighted(
        ss: &StateSpace,
        input_weights: &DMatrix<f64>,
        output_weights: &DMatrix<f64>,
    ) -> Result<Self, LinError> {
        if input_weights.nrows() != ss.n_inputs() || output_weights.ncols() != ss.n_outputs() {
            return Err(LinError::Ports("weight matrices do not match the model".into()));
        }
        Self::custom(
            ss.b() * input_weights,
            output_weights * ss.c(),
            output_weights * ss.d() * input_weights,
        )
    }

    /// Arbitrary ports given directly as `(B1, C1, D1)`; state combinations
    /// are expressed through `B1` and `C1`.
    pub fn custom(b1: DMatrix<f64>, c1: DMatrix<f64>, d1: DMatrix<f64>) -> Result<Self, LinError> {
        let m = b1.ncols();
        if c1.nrows() != m || d1.shape() != (m, m) || c1.ncols() != b1.nrows() {
            return Err(LinError::Ports(format!(
                "B1 {:?}, C1 {:?}, D1 {:?} do not form a square port pair",
                b1.shape(),
                c1.shape(),
                d1.shape()
            )));
        }
        if m == 0 {
            return Err(LinError::Ports("empty selection".into()));
        }
        Ok(Self {
            b1,
            c1,
            d1,
            inputs: (0..m).map(|i| format!("in{i}")).collect(),
            outputs: (0..m).map(|i| format!("out{i}")).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.b1.ncols()
    }
    pub fn b1(&self) -> &DMatrix<f64> {
        &self.b1
    }
    pub fn c1(&self) -> &DMatrix<f64> {
        &self.c1
    }
    pub fn d1(&self) -> &DMatrix<f64> {
        &self.d1
    }
    pub fn input_labels(&self) -> &[String] {
        &self.inputs
    }
    pub fn output_labels(&self) -> &[String] {
        &self.outputs
    }

    fn check_against(&self, n: usize) -> Result<(), LinError> {
        if self.b1.nrows() != n {
            return Err(LinError::Ports(format!(
                "selection built for n = {}, model has n = {n}",
                self.b1.nrows()
            )));
        }
        Ok(())
    }
}

/// Residue of the selected transfer matrix at one mode.
#[derive(Debug, Clone)]
pub struct ResidueMatrix {
    pub mode: Complex64,
    pub index: usize,
    pub r: CMat,
}

/// `G(s) = C1 (sI - A)^-1 B1 + D1` by a linear solve against `sI - A`.
pub fn subsystem_transfer(ss: &StateSpace, sel: &PortSelection, s: Complex64) -> Result<CMat, LinError> {
    sel.check_against(ss.n())?;
    let x = resolvent_times(ss.a(), &linalg::to_complex(&sel.b1), s)?;
    Ok(linalg::to_complex(&sel.c1) * x + linalg::to_complex(&sel.d1))
}

/// `Res_{lambda_i} G = C1 phi_i psi_i B1`.
pub fn residue_at_mode(ss: &StateSpace, sel: &PortSelection, i: usize) -> Result<ResidueMatrix, LinError> {
    let es = eigendecompose(ss)?;
    residue_with(&es, sel, i)
}

pub(crate) fn residue_with(es: &EigenSystem, sel: &PortSelection, i: usize) -> Result<ResidueMatrix, LinError> {
    es.check_index(i)?;
    sel.check_against(es.n())?;
    if !es.is_simple(i) {
        return Err(LinError::NonSimpleMode(i));
    }
    let cphi = linalg::to_complex(&sel.c1) * es.right(i);
    let psib = es.psi().row(i) * linalg::to_complex(&sel.b1);
    Ok(ResidueMatrix { mode: es.eigenvalues()[i], index: i, r: cphi * psib })
}

/// `(controllable, observable)` for mode `i` through the selected ports.
pub fn ctrb_obsv_flags(es: &EigenSystem, sel: &PortSelection, i: usize) -> Result<(bool, bool), LinError> {
    es.check_index(i)?;
    sel.check_against(es.n())?;
    let b1 = linalg::to_complex(&sel.b1);
    let c1 = linalg::to_complex(&sel.c1);
    let psi = es.psi().row(i).into_owned();
    let phi = es.right(i);
    let psib = &psi * &b1;
    let cphi = &c1 * &phi;
    let norm = |m: &CMat| linalg::fro(m);
    let psi_n = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let phi_n = linalg::vec_norm(&phi);
    let ctrb = psib.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() > CTRB_OBSV_RTOL * psi_n * norm(&b1);
    let obsv = cphi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() > CTRB_OBSV_RTOL * norm(&c1) * phi_n;
    Ok((ctrb, obsv))
}

/// Sensitivity of `lambda_i` to `H = G^-1`: `-(Res_{lambda_i} G)^T`.
pub fn gma_sensitivity(ss: &StateSpace, sel: &PortSelection, i: usize) -> Result<CMat, LinError> {
    let es = eigendecompose(ss)?;
    gma_sensitivity_with(&es, sel, i)
}

pub(crate) fn gma_sensitivity_with(es: &EigenSystem, sel: &PortSelection, i: usize) -> Result<CMat, LinError> {
    let (ctrb, obsv) = ctrb_obsv_flags(es, sel, i)?;
    if !ctrb {
        return Err(LinError::NotControllableObservable { mode: i, what: "controllable" });
    }
    if !obsv {
        return Err(LinError::NotControllableObservable { mode: i, what: "observable" });
    }
    let res = residue_with(es, sel, i)?;
    Ok(-res.r.transpose())
}

/// `|H(lambda_i + delta)| = 1/|det G(lambda_i + delta)|` along a shrinking
/// offset sequence.
#[derive(Debug, Clone)]
pub struct DetTrend {
    pub deltas: Vec<f64>,
    pub magnitudes: Vec<f64>,
    /// Least-squares slope of `log|H|` against `log delta`.
    pub slope: f64,
    /// `|H|` vanishes like a simple zero (`slope > 0.5`).
    pub tends_to_zero: bool,
}

pub fn det_h_check(ss: &StateSpace, sel: &PortSelection, i: usize) -> Result<DetTrend, LinError> {
    let es = eigendecompose(ss)?;
    det_h_check_with(ss, &es, sel, i)
}

pub(crate) fn det_h_check_with(
    ss: &StateSpace,
    es: &EigenSystem,
    sel: &PortSelection,
    i: usize,
) -> Result<DetTrend, LinError> {
    es.check_index(i)?;
    if !es.is_simple(i) {
        return Err(LinError::NonSimpleMode(i));
    }
    let li = es.eigenvalues()[i];
    let gap = es
        .eigenvalues()
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, lj)| (li - lj).norm())
        .fold(li.norm().max(1.0), f64::min);
    let dir = Complex64::new(1.0, 1.0) / 2f64.sqrt();
    let mut deltas = Vec::new();
    let mut magnitudes = Vec::new();
    for k in 2..=6 {
        let d = gap * 10f64.powi(-k);
        let g = subsystem_transfer(ss, sel, li + dir * d)?;
        deltas.push(d);
        magnitudes.push(1.0 / linalg::det(&g).norm());
    }
    let xs: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = magnitudes.iter().map(|m| m.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = num / den;
    Ok(DetTrend { deltas, magnitudes, slope, tends_to_zero: slope > 0.5 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64) -> StateSpace {
        let one = DMatrix::from_element(1, 1, 1.0);
        StateSpace::new(DMatrix::from_element(1, 1, a), one.clone(), one, DMatrix::zeros(1, 1)).unwrap()
    }

    /// `1/((s+1)(s+2))` in controllable canonical form.
    fn two_pole() -> StateSpace {
        StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn unequal_port_counts_rejected() {
        let ss = two_pole();
        assert!(matches!(PortSelection::indices(&ss, &[0], &[]), Err(LinError::Ports(_))));
    }

    #[test]
    fn partial_fraction_residues() {
        let ss = two_pole();
        let sel = PortSelection::indices(&ss, &[0], &[0]).unwrap();
        let es = eigendecompose(&ss).unwrap();
        let r0 = residue_with(&es, &sel, 0).unwrap();
        let r1 = residue_with(&es, &sel, 1).unwrap();
        assert!((r0.mode.re + 1.0).abs() < 1e-12);
        assert!((r0.r[(0, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((r1.r[(0, 0)] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn scalar_gma_is_minus_one() {
        let ss = scalar(-3.0);
        let sel = PortSelection::indices(&ss, &[0], &[0]).unwrap();
        let s = gma_sensitivity(&ss, &sel, 0).unwrap();
        assert!((s[(0, 0)] + Complex64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn zero_input_column_is_uncontrollable() {
        let ss = StateSpace::new(
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0])),
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let sel = PortSelection::indices(&ss, &[0], &[0]).unwrap();
        let es = eigendecompose(&ss).unwrap();
        assert_eq!(ctrb_obsv_flags(&es, &sel, 0).unwrap(), (false, true));
        let err = gma_sensitivity_with(&es, &sel, 0).unwrap_err();
        assert!(err.to_string().contains("psi_i*B1"));
    }

    #[test]
    fn full_state_flags_all_true() {
        let ss = two_pole();
        let sel = PortSelection::full_state(&ss);
        let es = eigendecompose(&ss).unwrap();
        for i in 0..2 {
            assert_eq!(ctrb_obsv_flags(&es, &sel, i).unwrap(), (true, true));
        }
    }

    #[test]
    fn repeated_mode_refused() {
        let ss = StateSpace::new(
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -1.0])),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let sel = PortSelection::full_state(&ss);
        assert_eq!(residue_at_mode(&ss, &sel, 0).unwrap_err(), LinError::NonSimpleMode(0));
    }

    #[test]
    fn full_state_det_trend_is_characteristic_polynomial() {
        let ss = two_pole();
        let sel = PortSelection::full_state(&ss);
        let t = det_h_check(&ss, &sel, 0).unwrap();
        assert!(t.tends_to_zero);
        assert!((t.slope - 1.0).abs() < 1e-3);
        // |det((lambda+d)I - A)| = |d| |lambda + d + 2|
        let d = t.deltas[0];
        let s = Complex64::new(-1.0, 0.0) + Complex64::new(1.0, 1.0) / 2f64.sqrt() * d;
        let expect = ((s + 1.0) * (s + 2.0)).norm();
        assert!((t.magnitudes[0] - expect).abs() < 1e-9 * expect);
    }
}
