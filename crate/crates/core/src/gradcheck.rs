//! Finite-difference verification of hand-written backward passes.
//!
//! Every backward implementation in this crate is validated by comparing
//! its analytic gradient of a scalar-valued function against central
//! differences, in `f64`. The check reports the worst relative error over
//! all coordinates, so callers can assert a single tolerance.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// A differentiable scalar-valued function of one tensor argument.
///
/// `eval` and `analytic_grad` may be called many times with perturbed
/// inputs; implementations must be pure in the sense that the same input
/// yields the same output (caching inside is fine).
pub trait ScalarFn {
    fn eval(&mut self, x: &Tensor<f64>) -> Result<f64>;
    fn analytic_grad(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>>;
}

/// Convenience [`ScalarFn`] from a pair of closures.
pub struct FnPair<E, G> {
    pub eval: E,
    pub grad: G,
}

impl<E, G> ScalarFn for FnPair<E, G>
where
    E: FnMut(&Tensor<f64>) -> Result<f64>,
    G: FnMut(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    fn eval(&mut self, x: &Tensor<f64>) -> Result<f64> {
        (self.eval)(x)
    }

    fn analytic_grad(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        (self.grad)(x)
    }
}

/// Compare the analytic gradient of `f` at `point` against central
/// differences `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check(f: &mut dyn ScalarFn, point: &Tensor<f64>, step: f64) -> Result<f64> {
    grad_check_with_floor(f, point, step, 0.0)
}

/// [`grad_check`] with an absolute-noise allowance: differences up to
/// `abs_floor` count as agreement before the relative error is formed.
///
/// Central differences of a long computation carry roundoff noise of
/// roughly `eps * |f| / step`; wherever the true gradient is smaller than
/// that noise (e.g. a parameter whose influence cancels in the batch), the
/// purely relative error is meaningless. Keep `abs_floor` at 0 for small
/// functions and around `1e-7` for whole-network checks.
pub fn grad_check_with_floor(
    f: &mut dyn ScalarFn,
    point: &Tensor<f64>,
    step: f64,
    abs_floor: f64,
) -> Result<f64> {
    if step <= 0.0 {
        return Err(Error::config("grad_check: step must be positive"));
    }
    let analytic = f.analytic_grad(point)?;
    if analytic.shape() != point.shape() {
        return Err(Error::config(format!(
            "grad_check: gradient shape {:?} != point shape {:?}",
            analytic.shape(),
            point.shape()
        )));
    }
    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f.eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f.eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        if !numeric.is_finite() || !a.is_finite() {
            return Err(Error::numeric(format!(
                "grad_check: non-finite gradient at coordinate {i}"
            )));
        }
        let rel = ((a - numeric).abs() - abs_floor).max(0.0)
            / (a.abs() + numeric.abs()).max(1e-8);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_gradient_checks_out() {
        // f(x) = sum(x^2), grad = 2x.
        let mut f = FnPair {
            eval: |x: &Tensor<f64>| Ok(x.data().iter().map(|v| v * v).sum()),
            grad: |x: &Tensor<f64>| Ok(x.map(|v| 2.0 * v)),
        };
        let p = Tensor::from_fn(&[3, 2], |i| 0.3 * i as f64 - 0.7);
        let err = grad_check(&mut f, &p, DEFAULT_STEP).unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // Claimed gradient 3x for f(x) = sum(x^2) must be flagged.
        let mut f = FnPair {
            eval: |x: &Tensor<f64>| Ok(x.data().iter().map(|v| v * v).sum()),
            grad: |x: &Tensor<f64>| Ok(x.map(|v| 3.0 * v)),
        };
        let p = Tensor::filled(&[4], 1.0);
        let err = grad_check(&mut f, &p, DEFAULT_STEP).unwrap();
        assert!(err > 0.1, "wrong gradient slipped through: {err}");
    }

    #[test]
    fn transcendental_gradient_checks_out() {
        // f(x) = sum(sin(x)), grad = cos(x).
        let mut f = FnPair {
            eval: |x: &Tensor<f64>| Ok(x.data().iter().map(|v| v.sin()).sum()),
            grad: |x: &Tensor<f64>| Ok(x.map(f64::cos)),
        };
        let p = Tensor::from_fn(&[5], |i| i as f64 * 0.9 - 2.0);
        let err = grad_check(&mut f, &p, DEFAULT_STEP).unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }
}
