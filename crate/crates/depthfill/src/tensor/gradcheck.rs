//! Central-difference gradient checking. The checker evaluates the function
//! forward-only for the finite differences, so it stays independent of the
//! backward rules it verifies.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Max over all checked coordinates of
/// `|analytic - central_difference| / max(|analytic|, |cd|, 1e-12)`.
///
/// `f` must produce a scalar. Inputs are registered as parameters, so each
/// receives an analytic gradient of its own shape.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
{
    grad_check_with_skip(f, inputs, eps, |_, _| false)
}

/// `grad_check` with a per-coordinate skip predicate `(input_index,
/// coordinate_index) -> bool`, used to exclude non-differentiable points
/// (e.g. a ReLU input at exactly 0).
pub fn grad_check_with_skip<F, S>(f: F, inputs: &[Tensor], eps: f64, skip: S) -> Result<f64>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
    S: Fn(usize, usize) -> bool,
{
    if eps <= 0.0 {
        return Err(Error::Contract("grad_check eps must be > 0".into()));
    }
    let mut tape = Tape::new();
    let tracked: Vec<Tensor> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = f(&mut tape, &tracked)?;
    if loss.len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check requires a scalar-valued function, got shape {:?}",
            loss.shape()
        )));
    }
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = tracked
        .iter()
        .map(|t| {
            grads
                .wrt(t)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, perturbed)?;
        out.item()
    };

    let mut max_rel = 0.0_f64;
    for (ti, t) in inputs.iter().enumerate() {
        for ci in 0..t.len() {
            if skip(ti, ci) {
                continue;
            }
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let mut d = t.data().to_vec();
            d[ci] += eps;
            plus[ti] = Tensor::new(t.shape(), d.clone())?;
            d[ci] -= 2.0 * eps;
            minus[ti] = Tensor::new(t.shape(), d)?;
            let cd = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = analytic[ti][ci];
            let rel = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-12);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
