use nalgebra::{DMatrix, DVector};

use super::{LinError, StateSpace};

/// Piecewise-constant input, held over each step.
#[derive(Debug, Clone)]
pub enum InputSignal {
    Zero,
    /// `value` applied from `at` seconds onwards.
    Step { at: f64, value: DVector<f64> },
    /// One input vector per step.
    Samples(Vec<DVector<f64>>),
}

impl InputSignal {
    fn value(&self, k: usize, t: f64, dt: f64, r: usize) -> Result<DVector<f64>, LinError> {
        match self {
            InputSignal::Zero => Ok(DVector::zeros(r)),
            InputSignal::Step { at, value } => {
                if value.len() != r {
                    return Err(LinError::Simulation(format!(
                        "step has {} entries, model has {r} inputs",
                        value.len()
                    )));
                }
                // Steps land on the first grid point at or after `at`.
                if t + 1e-9 * dt >= *at {
                    Ok(value.clone())
                } else {
                    Ok(DVector::zeros(r))
                }
            }
            InputSignal::Samples(v) => match v.get(k).or(v.last()) {
                Some(u) if u.len() == r => Ok(u.clone()),
                Some(u) => Err(LinError::Simulation(format!(
                    "sample has {} entries, model has {r} inputs",
                    u.len()
                ))),
                None => Ok(DVector::zeros(r)),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    /// Row `k` is the state at `t[k]`.
    pub x: DMatrix<f64>,
    /// Row `k` is the output at `t[k]`.
    pub y: DMatrix<f64>,
}

/// Fixed-step simulation with the exact zero-order-hold propagator
/// `x[k+1] = e^{A dt} x[k] + (int_0^dt e^{A tau} dtau) B u[k]`.
pub fn simulate(
    ss: &StateSpace,
    x0: &DVector<f64>,
    u: &InputSignal,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, LinError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(LinError::Simulation(format!("dt must be positive, got {dt}")));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(LinError::Simulation(format!("t_end must be finite and >= 0, got {t_end}")));
    }
    let n = ss.n();
    let r = ss.n_inputs();
    if x0.len() != n {
        return Err(LinError::Simulation(format!("x0 has {} entries, model has {n} states", x0.len())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(LinError::NonFinite);
    }
    let (ad, bd) = discretize(ss, dt);
    let steps = (t_end / dt).round() as usize;
    let mut t = Vec::with_capacity(steps + 1);
    let mut xs = DMatrix::zeros(steps + 1, n);
    let mut ys = DMatrix::zeros(steps + 1, ss.n_outputs());
    let mut x = x0.clone();
    for k in 0..=steps {
        let tk = k as f64 * dt;
        let uk = u.value(k, tk, dt, r)?;
        let yk = ss.c() * &x + ss.d() * &uk;
        t.push(tk);
        xs.set_row(k, &x.transpose());
        ys.set_row(k, &yk.transpose());
        if k < steps {
            x = &ad * &x + &bd * &uk;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(LinError::Simulation(format!("state overflow at t = {tk}")));
            }
        }
    }
    Ok(Trajectory { t, x: xs, y: ys })
}

/// `(e^{A dt}, Gamma B)` from one exponential of the augmented matrix.
fn discretize(ss: &StateSpace, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = ss.n();
    let r = ss.n_inputs();
    let mut aug = DMatrix::zeros(n + r, n + r);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ss.a() * dt));
    aug.view_mut((0, n), (n, r)).copy_from(&(ss.b() * dt));
    let e = aug.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, r)).into_owned())
}
