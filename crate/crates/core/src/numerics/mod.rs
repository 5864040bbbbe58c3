//! Dense `f64` tensors with reverse-mode differentiation.

mod tape;
mod tensor;

pub use tape::{ComputationRecord, RecordEntry, Tape, Var};
pub use tensor::{conv2d, Tensor};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Negative log-probability of `target` under `softmax(logits)`.
pub fn cross_entropy(logits: &Tensor, target: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = tape.cross_entropy(l, &[target])?;
    tape.value(loss).item()
}

/// Largest coordinate-wise relative error between the tape gradient of
/// `f` at `point` and central differences with step `epsilon`.
///
/// The relative error of coordinate `i` is
/// `|a_i - n_i| / max(|a_i|, |n_i|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, point: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var> + Sync,
{
    if !(epsilon > 0.0) {
        return Err(Error::invalid("finite_diff_check needs epsilon > 0"));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape
        .grad(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |p: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let x = t.leaf(p, false);
        let y = f(&mut t, x)?;
        t.value(y).item()
    };

    let errors: Vec<f64> = (0..point.len())
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut plus = point.clone();
            plus.data_mut()[i] += epsilon;
            let mut minus = point.clone();
            minus.data_mut()[i] -= epsilon;
            let numeric = (eval(plus)? - eval(minus)?) / (2.0 * epsilon);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            Ok((a - numeric).abs() / denom)
        })
        .collect::<Result<_>>()?;
    Ok(errors.into_iter().fold(0.0, f64::max))
}
