//! Central finite-difference gradient checking.

use super::{Float, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Number of coordinates compared.
    pub checked: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor so near-zero gradients compare absolutely.
    pub floor: f64,
    /// At most this many coordinates per input are perturbed (evenly strided).
    pub max_coords: usize,
}

impl GradCheckOptions {
    pub fn for_f64() -> Self {
        GradCheckOptions { step: 1e-5, floor: 1e-3, max_coords: 64 }
    }

    pub fn for_f32() -> Self {
        GradCheckOptions { step: 1e-2, floor: 1e-2, max_coords: 64 }
    }
}

fn eval<T: Float>(inputs: &[Tensor<T>], f: &impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    Ok(tape.value(loss).item().as_f64())
}

/// Compares the tape's gradients of the scalar built by `f` against central
/// differences, perturbing each input in turn.
pub fn check_gradients<T: Float>(
    inputs: &[Tensor<T>],
    opts: GradCheckOptions,
    f: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); t.len()]))
        .collect();

    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, checked: 0 };
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let stride = n.div_ceil(opts.max_coords.max(1)).max(1);
        for j in (0..n).step_by(stride) {
            let orig = input.data()[j];
            work[i].data_mut()[j] = T::from_f64(orig.as_f64() + opts.step);
            let plus = eval(&work, &f)?;
            work[i].data_mut()[j] = T::from_f64(orig.as_f64() - opts.step);
            let minus = eval(&work, &f)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[i][j].as_f64();
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!("gradient check input {i} coordinate {j}")));
            }
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
