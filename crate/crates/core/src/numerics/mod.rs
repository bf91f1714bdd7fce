//! Dense tensors and a small reverse-mode autodiff engine.
//!
//! Only the operations needed by the style-transfer models and metrics are
//! provided; there is no general broadcasting.

mod conv;
mod float;
pub mod gradcheck;
mod tape;
mod tensor;

pub use conv::Padding;
pub use float::Float;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;

/// Default epsilon added to the variance before the square root.
pub const STD_EPS: f64 = 1e-5;

/// Forward-only convolution with "same" padding of width `k / 2`.
pub fn conv2d<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let w = tape.constant(weight.clone());
    let b = bias.map(|b| tape.constant(b.clone()));
    let y = tape.conv2d(x, w, b, stride, padding)?;
    Ok(tape.take_value(y))
}

pub fn relu<T: Float>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn upsample_nearest<T: Float>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = tape.upsample_nearest(x, factor)?;
    Ok(tape.take_value(y))
}

/// Channel-wise mean and `sqrt(population variance + eps)`, each `[B,C]`.
pub fn channel_stats<T: Float>(input: &Tensor<T>, eps: T) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let (m, s) = tape.channel_stats(x, eps)?;
    Ok((tape.value(m).clone(), tape.value(s).clone()))
}

pub fn softmax_over_positions<T: Float>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = tape.softmax_last(x)?;
    Ok(tape.take_value(y))
}
