//! Finite-difference gradient checking.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Worst relative error between tape gradients and central differences.
///
/// `f` builds a scalar loss from one tape leaf per input. For each input the
/// error is `||analytic - numeric|| / max(||analytic||, ||numeric||)` (two
/// norms over the whole gradient); when both norms are below `1e-12` the
/// input counts as exact. Returns the maximum over inputs.
pub fn gradcheck<F>(inputs: &[Tensor], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let inputs: Vec<Tensor> = inputs
        .iter()
        .map(|t| t.detached_copy().requires_grad())
        .collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|t| tape.constant(t)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.item(loss))
    };

    let mut worst = 0.0_f64;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        let mut probe: Vec<Tensor> = inputs.iter().map(Tensor::detached_copy).collect();
        let mut numeric = vec![0.0; t.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let x0 = t.data()[j];
            probe[i].data_mut()[j] = x0 + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = x0 - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = x0;
            *slot = (up - down) / (2.0 * h);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both are negligible.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
