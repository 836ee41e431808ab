//! Central finite-difference gradient checking at 64-bit precision.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Smallest denominator used when forming relative errors, so entries whose
/// true gradient is zero are judged by absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of `fragment` with respect to each of
/// `inputs` against central differences with step `epsilon`, returning the
/// largest relative error `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
///
/// `fragment` builds a scalar from the bound inputs; it must be
/// differentiable at the probe point.
pub fn grad_check<F>(inputs: &[Tensor<f64>], epsilon: f64, fragment: F) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = fragment(&tape, &vars);
        let grads = tape.backward(loss).expect("fragment must produce a scalar");
        vars.iter().map(|v| grads.wrt(*v)).collect()
    };
    let eval = |probe: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        fragment(&tape, &vars).item()
    };
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + epsilon;
            let up = eval(&probe);
            probe[i].data_mut()[j] = orig - epsilon;
            let down = eval(&probe);
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[i].data()[j];
            let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}
