//! Element-wise activations. Both supported functions have derivatives
//! expressible through their *outputs*, so the backward pass takes the
//! forward output rather than the input: `relu'(x) = [y > 0]` (zero at the
//! kink), `sigmoid'(x) = y*(1-y)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Numerically stable logistic function.
#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn activate<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => input.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Sigmoid => input.map(|v| T::from_f64(sigmoid(v.as_f64()))),
    }
}

/// Chain `grad_out` through the activation, given the forward *output*.
pub fn activate_backward<T: Scalar>(
    output: &Tensor<T>,
    kind: Activation,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if output.shape() != grad_out.shape() {
        return Err(Error::config(format!(
            "activate_backward: shape mismatch {:?} vs {:?}",
            output.shape(),
            grad_out.shape()
        )));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| match kind {
            Activation::Relu => {
                if y > T::zero() {
                    g
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y) * g,
        })
        .collect();
    Tensor::new(output.shape().to_vec(), data)
}
