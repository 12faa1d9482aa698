use std::collections::HashSet;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::LinError;
use crate::linalg::{self, CMat};

/// Real LTI model `x' = A x + B u`, `y = C x + D u` with labelled signals.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    states: Vec<String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl StateSpace {
    /// Build a model with default labels `x0.., u0.., y0..`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, LinError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinError::Dimension(format!("A is {}x{}", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(LinError::Dimension(format!("B has {} rows, A has {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(LinError::Dimension(format!("C has {} cols, A has {n}", c.ncols())));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(LinError::Dimension(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        if [&a, &b, &c, &d].iter().any(|m| m.iter().any(|x| !x.is_finite())) {
            return Err(LinError::NonFinite);
        }
        let states = (0..n).map(|i| format!("x{i}")).collect();
        let inputs = (0..b.ncols()).map(|i| format!("u{i}")).collect();
        let outputs = (0..c.nrows()).map(|i| format!("y{i}")).collect();
        Ok(Self { a, b, c, d, states, inputs, outputs })
    }

    /// Static gain (no states).
    pub fn gain(d: DMatrix<f64>) -> Result<Self, LinError> {
        let (m, r) = d.shape();
        Self::new(DMatrix::zeros(0, 0), DMatrix::zeros(0, r), DMatrix::zeros(m, 0), d)
    }

    pub fn with_labels(
        mut self,
        states: Vec<String>,
        inputs: Vec<String>,
        outputs: Vec<String>,
    ) -> Result<Self, LinError> {
        for (kind, labels, want) in [
            ("state", &states, self.n()),
            ("input", &inputs, self.n_inputs()),
            ("output", &outputs, self.n_outputs()),
        ] {
            if labels.len() != want {
                return Err(LinError::Dimension(format!(
                    "{} {kind} labels for {want} {kind}s",
                    labels.len()
                )));
            }
            let mut seen = HashSet::new();
            for l in labels {
                if !seen.insert(l.as_str()) {
                    return Err(LinError::DuplicateLabel { kind, label: l.clone() });
                }
            }
        }
        self.states = states;
        self.inputs = inputs;
        self.outputs = outputs;
        Ok(self)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
    pub fn state_labels(&self) -> &[String] {
        &self.states
    }
    pub fn input_labels(&self) -> &[String] {
        &self.inputs
    }
    pub fn output_labels(&self) -> &[String] {
        &self.outputs
    }

    pub fn input_index(&self, label: &str) -> Option<usize> {
        self.inputs.iter().position(|l| l == label)
    }
    pub fn output_index(&self, label: &str) -> Option<usize> {
        self.outputs.iter().position(|l| l == label)
    }

    /// Transfer matrix `C (sI - A)^-1 B + D` at a complex frequency.
    pub fn eval(&self, s: Complex64) -> Result<CMat, LinError> {
        let x = resolvent_times(&self.a, &linalg::to_complex(&self.b), s)?;
        Ok(linalg::to_complex(&self.c) * x + linalg::to_complex(&self.d))
    }

    /// Same model with inputs and outputs re-ordered/sub-selected.
    pub fn select(&self, inputs: &[usize], outputs: &[usize]) -> Result<Self, LinError> {
        let n_in = self.n_inputs();
        let n_out = self.n_outputs();
        if let Some(&i) = inputs.iter().find(|&&i| i >= n_in) {
            return Err(LinError::Ports(format!("input index {i} out of range ({n_in})")));
        }
        if let Some(&o) = outputs.iter().find(|&&o| o >= n_out) {
            return Err(LinError::Ports(format!("output index {o} out of range ({n_out})")));
        }
        let b = self.b.select_columns(inputs);
        let c = self.c.select_rows(outputs);
        let d = self.d.select_rows(outputs).select_columns(inputs);
        Ok(Self {
            a: self.a.clone(),
            b,
            c,
            d,
            states: self.states.clone(),
            inputs: inputs.iter().map(|&i| self.inputs[i].clone()).collect(),
            outputs: outputs.iter().map(|&o| self.outputs[o].clone()).collect(),
        })
    }

    /// Scale the whole transfer matrix by a real constant.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.c *= k;
        out.d *= k;
        out
    }
}

/// Solve `(sI - A) X = rhs`; reports `AtPole` when `s` is numerically an
/// eigenvalue of `A`.
pub(crate) fn resolvent_times(a: &DMatrix<f64>, rhs: &CMat, s: Complex64) -> Result<CMat, LinError> {
    let n = a.nrows();
    if n == 0 {
        return Ok(CMat::zeros(0, rhs.ncols()));
    }
    let m = linalg::shifted(a, s);
    let at_pole = || LinError::AtPole { re: s.re, im: s.im };
    let lu = m.clone().lu();
    let scale = linalg::fro(&m).max(1.0);
    let min_pivot = (0..n).map(|i| lu.u()[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-13 * scale {
        return Err(at_pole());
    }
    let x = lu.solve(rhs).ok_or_else(at_pole)?;
    // Growth probe: a resolvent norm above 1e9 means s sits within ~1e-9 of
    // the spectrum.
    let probe = linalg::probe_vector(n, 0);
    let px = lu.solve(&CMat::from_column_slice(n, 1, probe.as_slice())).ok_or_else(at_pole)?;
    let growth = linalg::fro(&px) / linalg::vec_norm(&probe);
    if !growth.is_finite() || growth > 1e9 {
        return Err(at_pole());
    }
    Ok(x)
}
