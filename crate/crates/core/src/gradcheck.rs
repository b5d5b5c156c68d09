//! Central-difference gradient checking against the tape.

use crate::autograd::{Tape, Var};
use crate::error::{contract_err, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Default finite-difference step.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Floor for the relative-error denominator.
pub const DENOM_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn eval_scalar(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return contract_err(format!("grad_check needs a scalar function, got {:?}", t.shape()));
    }
    Ok(t.data()[0])
}

/// Max relative error between the tape gradient of scalar `f` at `x` and
/// central differences, over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = f(&mut tape, xv)?;
    eval_scalar(&tape, y)?;
    let grads = tape.backward(y)?;
    let analytic = grads.wrt(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval_at = |t: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf(t);
        let y = f(&mut tape, xv)?;
        eval_scalar(&tape, y)
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval_at(plus)? - eval_at(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Same check with respect to a stored parameter. `coords` restricts the
/// comparison to a subset of flat positions (all of them when `None`).
pub fn grad_check_param<F>(f: F, store: &ParamStore, id: ParamId, coords: Option<&[usize]>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let y = f(&mut tape, store)?;
    eval_scalar(&tape, y)?;
    let grads = tape.backward(y)?;
    let shape = store.value(id).shape().to_vec();
    let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(&shape));

    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..analytic.len()).collect();
            &all
        }
    };
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let base = store.value(id).data()[i];
        let mut at = |v: f64| -> Result<f64> {
            probe.get_mut(id).value.data_mut()[i] = v;
            let mut tape = Tape::new();
            let y = f(&mut tape, &probe)?;
            eval_scalar(&tape, y)
        };
        let numeric = (at(base + eps)? - at(base - eps)?) / (2.0 * eps);
        probe.get_mut(id).value.data_mut()[i] = base;
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
