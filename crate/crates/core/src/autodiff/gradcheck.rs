//! Central finite-difference oracle for reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(1, |analytic|, |numeric|)` seen.
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Options for [`grad_check_with`].
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many coordinates (sampled without replacement).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            max_coords: None,
            seed: 0,
        }
    }
}

fn eval<F>(f: &F, point: &Tensor<f64>) -> Result<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let x = tape.constant(point.clone());
    let y = f(x)?;
    if y.value().len() != 1 {
        return Err(Error::NonScalarLoss(y.shape()));
    }
    Ok(y.item())
}

/// Compares the tape gradient of the scalar function `f` at `point` with
/// central differences. Errors use a unit floor in the denominator so
/// vanishing components are judged on absolute error.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    grad_check_with(f, point, tol, &GradCheckOptions::default())
}

pub fn grad_check_with<F>(f: F, point: &Tensor<f64>, tol: f64, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let analytic = {
        let tape = Tape::new();
        let x = tape.var(point.clone());
        let y = f(x)?;
        y.backward()?;
        tape.grad_or_zeros(x)
    };
    let y0 = eval(&f, point)?;
    let y1 = eval(&f, point)?;
    if y0.to_bits() != y1.to_bits() {
        return Err(Error::NonDeterministic);
    }

    let n = point.len();
    let coords: Vec<usize> = match opts.max_coords {
        Some(m) if m < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, n, m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: coords.len(),
        tol,
        passed: true,
    };
    let mut probe = point.clone();
    for &i in &coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + opts.step;
        let fp = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - opts.step;
        let fm = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * opts.step);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
