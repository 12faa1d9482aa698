//! Data-driven device: a rational admittance fitted to measured `Y(jw)`.

use nalgebra::DMatrix;

use super::{DeviceError, DqTransfer, PerUnitBase, PortKind};
use crate::lintf::StateSpace;
use crate::vectorfit::{vector_fit, FitOptions, Sample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataFitOptions {
    pub iterations: usize,
    pub enforce_stable: bool,
    /// Largest accepted RMS error relative to the RMS sample magnitude.
    pub max_relative_rms: f64,
}

impl Default for DataFitOptions {
    fn default() -> Self {
        Self { iterations: 20, enforce_stable: true, max_relative_rms: 0.05 }
    }
}

fn rms_magnitude(samples: &[Sample]) -> f64 {
    let n: usize = samples.iter().map(|s| s.value.len()).sum();
    let acc: f64 = samples.iter().flat_map(|s| s.value.iter()).map(|z| z.norm_sqr()).sum();
    (acc / n.max(1) as f64).sqrt()
}

/// Fit `order` common poles to 2x2 admittance samples. `order = 0` fits a
/// constant real matrix.
pub fn admittance_from_samples(
    samples: &[Sample],
    order: usize,
    opts: &DataFitOptions,
    base: PerUnitBase,
) -> Result<DqTransfer, DeviceError> {
    if let Some(s) = samples.iter().find(|s| s.value.shape() != (2, 2)) {
        return Err(DeviceError::NotDq(s.value.nrows(), s.value.ncols()));
    }
    let scale = rms_magnitude(samples).max(f64::MIN_POSITIVE);
    let (ss, rms) = if order == 0 {
        if samples.is_empty() {
            return Err(crate::vectorfit::FitError::TooFewSamples { need: 1, got: 0 }.into());
        }
        if samples.iter().flat_map(|s| s.value.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(crate::vectorfit::FitError::NonFinite.into());
        }
        let d = DMatrix::from_fn(2, 2, |i, j| {
            samples.iter().map(|s| s.value[(i, j)].re).sum::<f64>() / samples.len() as f64
        });
        let mut acc = 0.0;
        for s in samples {
            acc += s.value.iter().zip(d.iter()).map(|(z, x)| (z - x).norm_sqr()).sum::<f64>();
        }
        (StateSpace::gain(d)?, (acc / (4 * samples.len()) as f64).sqrt())
    } else {
        let fit = vector_fit(
            samples,
            &FitOptions { order, iterations: opts.iterations, enforce_stable: opts.enforce_stable, ..FitOptions::default() },
        )?;
        (fit.to_state_space()?, fit.rms_error)
    };
    let rel = rms / scale;
    if rel > opts.max_relative_rms {
        return Err(DeviceError::PoorFit { rms: rel, threshold: opts.max_relative_rms });
    }
    DqTransfer::new(ss, PortKind::Admittance, base)
}
