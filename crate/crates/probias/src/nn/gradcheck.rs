//! Central-difference gradient verification for any loss built on the tape.

use super::params::{ParamSet, WatchedParams};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A forward pass: watch the parameters on the tape and return the scalar
/// loss plus the watch handle.
pub type ForwardFn<'a> = dyn Fn(&Tape, &ParamSet) -> Result<(Var, WatchedParams)> + 'a;

/// Compares analytic gradients against central differences, scalar by
/// scalar, over every parameter in `params`. Returns the maximum relative
/// error |a−n| / max(1, |a|, |n|).
///
/// The forward pass must be deterministic (dropout off); a stochastic
/// forward is detected and rejected.
pub fn finite_diff_check(params: &mut ParamSet, h: f64, forward: &ForwardFn) -> Result<f64> {
    let loss_at = |params: &ParamSet| -> Result<f64> {
        let tape = Tape::new();
        let (loss, _) = forward(&tape, params)?;
        let v = loss.item();
        if !v.is_finite() {
            return Err(Error::numeric("non-finite loss in gradient check"));
        }
        Ok(v)
    };

    let base = loss_at(params)?;
    if loss_at(params)? != base {
        return Err(Error::numeric(
            "stochastic forward pass: deterministic mode required",
        ));
    }

    // analytic gradients, one tensor per parameter in registration order
    let tape = Tape::new();
    let (loss, watched) = forward(&tape, params)?;
    let grads = loss.backward();
    let analytic: Vec<Tensor> = (0..params.len())
        .map(|i| grads.get_or_zeros(watched.var_by_index(i)))
        .collect();

    let mut max_rel = 0.0f64;
    for pi in 0..params.len() {
        for si in 0..analytic[pi].len() {
            let orig = read_scalar(params, pi, si);

            write_scalar(params, pi, si, orig + h);
            let plus = loss_at(params)?;
            write_scalar(params, pi, si, orig - h);
            let minus = loss_at(params)?;
            write_scalar(params, pi, si, orig);

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].data()[si];
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

fn read_scalar(params: &ParamSet, pi: usize, si: usize) -> f64 {
    params.iter().nth(pi).unwrap().value.data()[si]
}

fn write_scalar(params: &mut ParamSet, pi: usize, si: usize, v: f64) {
    params.iter_mut().nth(pi).unwrap().value.data_mut()[si] = v;
}
