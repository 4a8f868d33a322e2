//! Fully connected layer: `y = x·W + b` with `x: [N,D]`, `W: [D,K]`,
//! `b: [K]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_linear_args<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<(usize, usize, usize)> {
    if input.rank() != 2 || weight.rank() != 2 {
        return Err(Error::config(format!(
            "linear: input [N,D] and weight [D,K] required, got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    let (n, d) = (input.dim(0), input.dim(1));
    let k = weight.dim(1);
    if weight.dim(0) != d {
        return Err(Error::config(format!(
            "linear: input width {} != weight rows {}",
            d,
            weight.dim(0)
        )));
    }
    if let Some(b) = bias {
        if b.rank() != 1 || b.dim(0) != k {
            return Err(Error::config(format!(
                "linear: bias shape {:?}, expected [{k}]",
                b.shape()
            )));
        }
    }
    Ok((n, d, k))
}

pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, d, k) = check_linear_args(input, weight, Some(bias))?;
    let x = input.data();
    let w = weight.data();
    let b = bias.data();
    let mut out = Tensor::zeros(&[n, k]);
    let o = out.data_mut();
    for ni in 0..n {
        let xrow = &x[ni * d..(ni + 1) * d];
        let orow = &mut o[ni * k..(ni + 1) * k];
        orow.copy_from_slice(b);
        for (di, &xv) in xrow.iter().enumerate() {
            let wrow = &w[di * k..(di + 1) * k];
            for (ki, &wv) in wrow.iter().enumerate() {
                orow[ki] = orow[ki] + xv * wv;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`linear`]: `dx = dy·Wᵀ`, `dW = xᵀ·dy`, `db = Σ_n dy`.
pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d, k) = check_linear_args(input, weight, None)?;
    if grad_out.shape() != [n, k] {
        return Err(Error::config(format!(
            "linear_backward: grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, k]
        )));
    }
    let x = input.data();
    let w = weight.data();
    let dy = grad_out.data();
    let mut grad_in = Tensor::zeros(&[n, d]);
    let mut grad_w = Tensor::zeros(&[d, k]);
    let mut grad_b = Tensor::zeros(&[k]);
    let dx = grad_in.data_mut();
    let dw = grad_w.data_mut();
    let db = grad_b.data_mut();
    for ni in 0..n {
        let dyrow = &dy[ni * k..(ni + 1) * k];
        let xrow = &x[ni * d..(ni + 1) * d];
        for (ki, &g) in dyrow.iter().enumerate() {
            db[ki] = db[ki] + g;
        }
        for di in 0..d {
            let wrow = &w[di * k..(di + 1) * k];
            let mut acc = T::zero();
            let dwrow = &mut dw[di * k..(di + 1) * k];
            for ki in 0..k {
                acc = acc + dyrow[ki] * wrow[ki];
                dwrow[ki] = dwrow[ki] + xrow[di] * dyrow[ki];
            }
            dx[ni * d + di] = acc;
        }
    }
    Ok((grad_in, grad_w, grad_b))
}
