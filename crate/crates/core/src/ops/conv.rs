//! 2-D cross-correlation ("convolution" in deep-learning convention) with
//! stride and symmetric zero padding. Bias-free throughout: every convolution
//! in the models is followed by batch norm, whose shift makes a bias
//! redundant.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output size along one spatial axis: `floor((input + 2*pad - kernel)/stride) + 1`.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::config("conv: kernel and stride must be >= 1"));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::config(format!(
            "conv: kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Range of output positions `o` for which `o*stride + k_off - padding` is a
/// valid input index in `[0, input)`. Hoisting this out of the inner loops
/// removes all bounds branches from the hot path.
#[inline]
fn valid_out_range(
    out: usize,
    input: usize,
    stride: usize,
    k_off: usize,
    padding: usize,
) -> (usize, usize) {
    let lo = if k_off >= padding {
        0
    } else {
        (padding - k_off).div_ceil(stride)
    };
    if input + padding <= k_off {
        return (0, 0);
    }
    let hi = ((input - 1 + padding - k_off) / stride + 1).min(out);
    (lo.min(hi), hi)
}

fn check_conv_args<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    if input.rank() != 4 {
        return Err(Error::config(format!(
            "conv2d: input must be [N,C,H,W], got {:?}",
            input.shape()
        )));
    }
    if weight.rank() != 4 {
        return Err(Error::config(format!(
            "conv2d: weight must be [Cout,Cin,KH,KW], got {:?}",
            weight.shape()
        )));
    }
    if input.dim(1) != weight.dim(1) {
        return Err(Error::config(format!(
            "conv2d: input channels {} != weight channels {}",
            input.dim(1),
            weight.dim(1)
        )));
    }
    let oh = conv_out_dim(input.dim(2), weight.dim(2), stride, padding)?;
    let ow = conv_out_dim(input.dim(3), weight.dim(3), stride, padding)?;
    Ok((oh, ow))
}

/// Forward convolution: input `[N,Cin,H,W]`, weight `[Cout,Cin,KH,KW]` →
/// output `[N,Cout,OH,OW]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (oh, ow) = check_conv_args(input, weight, stride, padding)?;
    let (n, cin, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let (cout, kh, kw) = (weight.dim(0), weight.dim(2), weight.dim(3));

    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let x = input.data();
    let wt = weight.data();
    let o = out.data_mut();

    for ni in 0..n {
        for co in 0..cout {
            let obase = (ni * cout + co) * oh * ow;
            for ci in 0..cin {
                let ibase = (ni * cin + ci) * h * w;
                let wbase = (co * cin + ci) * kh * kw;
                for r in 0..kh {
                    let (lo_h, hi_h) = valid_out_range(oh, h, stride, r, padding);
                    for c in 0..kw {
                        let wv = wt[wbase + r * kw + c];
                        let (lo_w, hi_w) = valid_out_range(ow, w, stride, c, padding);
                        for ohi in lo_h..hi_h {
                            let ih = ohi * stride + r - padding;
                            let irow = ibase + ih * w;
                            let orow = obase + ohi * ow;
                            let mut iw = lo_w * stride + c - padding;
                            for owi in lo_w..hi_w {
                                o[orow + owi] = o[orow + owi] + wv * x[irow + iw];
                                iw += stride;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input and weight.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (oh, ow) = check_conv_args(input, weight, stride, padding)?;
    let (n, cin, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let (cout, kh, kw) = (weight.dim(0), weight.dim(2), weight.dim(3));
    if grad_out.shape() != [n, cout, oh, ow] {
        return Err(Error::config(format!(
            "conv2d_backward: grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, cout, oh, ow]
        )));
    }

    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_w = Tensor::zeros(weight.shape());
    let x = input.data();
    let wt = weight.data();
    let dy = grad_out.data();
    let dx = grad_in.data_mut();
    let dw = grad_w.data_mut();

    for ni in 0..n {
        for co in 0..cout {
            let ybase = (ni * cout + co) * oh * ow;
            for ci in 0..cin {
                let ibase = (ni * cin + ci) * h * w;
                let wbase = (co * cin + ci) * kh * kw;
                for r in 0..kh {
                    let (lo_h, hi_h) = valid_out_range(oh, h, stride, r, padding);
                    for c in 0..kw {
                        let wv = wt[wbase + r * kw + c];
                        let (lo_w, hi_w) = valid_out_range(ow, w, stride, c, padding);
                        let mut wsum = T::zero();
                        for ohi in lo_h..hi_h {
                            let ih = ohi * stride + r - padding;
                            let irow = ibase + ih * w;
                            let yrow = ybase + ohi * ow;
                            let mut iw = lo_w * stride + c - padding;
                            for owi in lo_w..hi_w {
                                let g = dy[yrow + owi];
                                dx[irow + iw] = dx[irow + iw] + wv * g;
                                wsum = wsum + x[irow + iw] * g;
                                iw += stride;
                            }
                        }
                        dw[wbase + r * kw + c] = dw[wbase + r * kw + c] + wsum;
                    }
                }
            }
        }
    }
    Ok((grad_in, grad_w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_dim_formula() {
        // 7x7 stride-2 pad-3 stem on a 400-frame input: ceil(400/2) = 200.
        assert_eq!(conv_out_dim(400, 7, 2, 3).unwrap(), 200);
        assert_eq!(conv_out_dim(257, 7, 2, 3).unwrap(), 129);
        // 3x3 stride-1 pad-1 preserves size.
        assert_eq!(conv_out_dim(100, 3, 1, 1).unwrap(), 100);
        // 1x1 stride-2 halves (rounding up).
        assert_eq!(conv_out_dim(101, 1, 2, 0).unwrap(), 51);
        assert!(conv_out_dim(2, 5, 1, 1).is_err());
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| i as f64 + 1.0);
        let w = Tensor::<f64>::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_computed_3x3_example() {
        // 4x4 input of 1..16, single 3x3 averaging-like kernel of ones,
        // stride 1, pad 1.
        let x = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64 + 1.0);
        let w = Tensor::<f64>::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, 1, 0).unwrap();
        // Window at (0,0) covers 1,2,3,5,6,7,9,10,11 = 54.
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[54.0, 63.0, 90.0, 99.0]);

        let yp = conv2d(&x, &w, 1, 1).unwrap();
        assert_eq!(yp.shape(), &[1, 1, 4, 4]);
        // Corner window covers 1,2,5,6 = 14 (rest is zero padding).
        assert_eq!(yp.data()[0], 14.0);
        assert_eq!(yp.at4(0, 0, 1, 1), 54.0);
    }

    #[test]
    fn stride_two_subsamples() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let w = Tensor::<f64>::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let y = conv2d(&x, &w, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[0.0, 4.0, 16.0, 20.0]);
    }

    #[test]
    fn multi_channel_accumulates() {
        // Two input channels, kernel sums both with weights 1 and 10.
        let x = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64);
        let w = Tensor::<f64>::new(vec![1, 2, 1, 1], vec![1.0, 10.0]).unwrap();
        let y = conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.data(), &[40.0, 51.0, 62.0, 73.0]);
    }

    #[test]
    fn backward_matches_hand_example() {
        // y = w * x (1x1 conv, scalar weight): dx = w*dy, dw = sum(x*dy).
        let x = Tensor::<f64>::from_fn(&[1, 1, 2, 2], |i| i as f64 + 1.0);
        let w = Tensor::<f64>::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let dy = Tensor::<f64>::filled(&[1, 1, 2, 2], 1.0);
        let (dx, dw) = conv2d_backward(&x, &w, 1, 0, &dy).unwrap();
        assert_eq!(dx.data(), &[3.0, 3.0, 3.0, 3.0]);
        assert_eq!(dw.data(), &[10.0]);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(&[2, 4, 3, 3]);
        assert!(conv2d(&x, &w, 1, 1).is_err());
    }
}
