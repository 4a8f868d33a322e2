//! Spatial pooling: windowed max/average pooling and whole-plane global
//! pooling (average, or concatenated mean + standard deviation for the
//! statistics-pooling model head).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::conv::conv_out_dim;

/// Variance floor for the statistics-pooling standard deviation,
/// `std = sqrt(var + STATS_EPS)`.
pub const STATS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// State the backward pass needs. For max pooling this is the flat input
/// index of each window's winner (ties broken by the first candidate in
/// row-major scan order); average pooling needs nothing beyond shapes.
#[derive(Debug, Clone)]
pub struct PoolCache {
    argmax: Vec<usize>,
}

fn check_pool_args<T: Scalar>(
    input: &Tensor<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    if input.rank() != 4 {
        return Err(Error::config(format!(
            "pool2d: input must be [N,C,H,W], got {:?}",
            input.shape()
        )));
    }
    if kernel == 0 || stride == 0 {
        return Err(Error::config("pool2d: kernel and stride must be >= 1"));
    }
    if padding >= kernel {
        // Guarantees every window overlaps the input, so max pooling always
        // has at least one candidate.
        return Err(Error::config(format!(
            "pool2d: padding {padding} must be < kernel {kernel}"
        )));
    }
    let oh = conv_out_dim(input.dim(2), kernel, stride, padding)?;
    let ow = conv_out_dim(input.dim(3), kernel, stride, padding)?;
    Ok((oh, ow))
}

/// Windowed pooling, forward only.
pub fn pool2d<T: Scalar>(
    input: &Tensor<T>,
    kind: PoolKind,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    pool2d_cached(input, kind, kernel, stride, padding).map(|(y, _)| y)
}

/// Windowed pooling returning the cache for the backward pass.
///
/// Average pooling divides by the full window area `kernel*kernel`
/// regardless of how much of the window lies in padding (padding
/// contributes zeros).
pub fn pool2d_cached<T: Scalar>(
    input: &Tensor<T>,
    kind: PoolKind,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, PoolCache)> {
    let (oh, ow) = check_pool_args(input, kernel, stride, padding)?;
    let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = Vec::new();
    if kind == PoolKind::Max {
        argmax.resize(n * c * oh * ow, 0);
    }
    let x = input.data();
    let o = out.data_mut();
    let inv_area = T::from_f64(1.0 / ((kernel * kernel) as f64));

    for nc in 0..n * c {
        let ibase = nc * h * w;
        let obase = nc * oh * ow;
        for ohi in 0..oh {
            let (lo_h, hi_h) = window_bounds(ohi * stride, kernel, padding, h);
            for owi in 0..ow {
                let (lo_w, hi_w) = window_bounds(owi * stride, kernel, padding, w);
                let oidx = obase + ohi * ow + owi;
                match kind {
                    PoolKind::Max => {
                        let mut best = T::neg_infinity();
                        let mut best_idx = ibase + lo_h * w + lo_w;
                        for ih in lo_h..hi_h {
                            let row = ibase + ih * w;
                            for iw in lo_w..hi_w {
                                let v = x[row + iw];
                                // Strict > keeps the first (row-major) winner
                                // on ties.
                                if v > best {
                                    best = v;
                                    best_idx = row + iw;
                                }
                            }
                        }
                        o[oidx] = best;
                        argmax[oidx] = best_idx;
                    }
                    PoolKind::Avg => {
                        let mut sum = T::zero();
                        for ih in lo_h..hi_h {
                            let row = ibase + ih * w;
                            for iw in lo_w..hi_w {
                                sum = sum + x[row + iw];
                            }
                        }
                        o[oidx] = sum * inv_area;
                    }
                }
            }
        }
    }
    Ok((out, PoolCache { argmax }))
}

/// Valid input index range `[lo, hi)` for a window whose unclamped start is
/// `raw_start - padding` and whose length is `kernel`.
#[inline]
fn window_bounds(raw_start: usize, kernel: usize, padding: usize, size: usize) -> (usize, usize) {
    let lo = raw_start.saturating_sub(padding);
    let hi = (raw_start + kernel).saturating_sub(padding).min(size);
    (lo.min(hi), hi)
}

/// Gradient of [`pool2d_cached`] with respect to its input.
pub fn pool2d_backward<T: Scalar>(
    input_shape: &[usize],
    kind: PoolKind,
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: &PoolCache,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if input_shape.len() != 4 {
        return Err(Error::config("pool2d_backward: input shape must be rank 4"));
    }
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let oh = conv_out_dim(h, kernel, stride, padding)?;
    let ow = conv_out_dim(w, kernel, stride, padding)?;
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::config(format!(
            "pool2d_backward: grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, c, oh, ow]
        )));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let dy = grad_out.data();
    let dx = grad_in.data_mut();
    match kind {
        PoolKind::Max => {
            if cache.argmax.len() != dy.len() {
                return Err(Error::config(
                    "pool2d_backward: cache does not match output size",
                ));
            }
            for (oidx, &iidx) in cache.argmax.iter().enumerate() {
                dx[iidx] = dx[iidx] + dy[oidx];
            }
        }
        PoolKind::Avg => {
            let inv_area = T::from_f64(1.0 / ((kernel * kernel) as f64));
            for nc in 0..n * c {
                let ibase = nc * h * w;
                let obase = nc * oh * ow;
                for ohi in 0..oh {
                    let (lo_h, hi_h) = window_bounds(ohi * stride, kernel, padding, h);
                    for owi in 0..ow {
                        let (lo_w, hi_w) = window_bounds(owi * stride, kernel, padding, w);
                        let g = dy[obase + ohi * ow + owi] * inv_area;
                        for ih in lo_h..hi_h {
                            let row = ibase + ih * w;
                            for iw in lo_w..hi_w {
                                dx[row + iw] = dx[row + iw] + g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalPoolKind {
    /// Plain global average: `[N,C,H,W] -> [N,C]`.
    Avg,
    /// Mean and standard deviation per channel, concatenated:
    /// `[N,C,H,W] -> [N,2C]` laid out `[means..., stds...]`.
    MeanStd,
}

/// Collapse the spatial axes of `[N,C,H,W]` to `[N,C]` (average) or
/// `[N,2C]` (mean then std, population variance, floored by [`STATS_EPS`]).
pub fn global_pool<T: Scalar>(input: &Tensor<T>, kind: GlobalPoolKind) -> Result<Tensor<T>> {
    if input.rank() != 4 {
        return Err(Error::config(format!(
            "global_pool: input must be [N,C,H,W], got {:?}",
            input.shape()
        )));
    }
    let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let m = h * w;
    if m == 0 {
        return Err(Error::config("global_pool: empty spatial plane"));
    }
    let inv_m = 1.0 / m as f64;
    let x = input.data();
    let cols = match kind {
        GlobalPoolKind::Avg => c,
        GlobalPoolKind::MeanStd => 2 * c,
    };
    let mut out = Tensor::zeros(&[n, cols]);
    let o = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * m;
            let plane = &x[base..base + m];
            let mean = plane.iter().map(|v| v.as_f64()).sum::<f64>() * inv_m;
            match kind {
                GlobalPoolKind::Avg => o[ni * cols + ci] = T::from_f64(mean),
                GlobalPoolKind::MeanStd => {
                    let var = plane
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - mean;
                            d * d
                        })
                        .sum::<f64>()
                        * inv_m;
                    o[ni * cols + ci] = T::from_f64(mean);
                    o[ni * cols + c + ci] = T::from_f64((var + STATS_EPS).sqrt());
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`global_pool`]; needs the original input to rebuild the
/// per-channel statistics in the `MeanStd` case.
pub fn global_pool_backward<T: Scalar>(
    input: &Tensor<T>,
    kind: GlobalPoolKind,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let m = h * w;
    let cols = match kind {
        GlobalPoolKind::Avg => c,
        GlobalPoolKind::MeanStd => 2 * c,
    };
    if grad_out.shape() != [n, cols] {
        return Err(Error::config(format!(
            "global_pool_backward: grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, cols]
        )));
    }
    let inv_m = 1.0 / m as f64;
    let x = input.data();
    let dy = grad_out.data();
    let mut grad_in = Tensor::zeros(input.shape());
    let dx = grad_in.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * m;
            let plane = &x[base..base + m];
            let d_mean = dy[ni * cols + ci].as_f64();
            match kind {
                GlobalPoolKind::Avg => {
                    let g = T::from_f64(d_mean * inv_m);
                    for v in &mut dx[base..base + m] {
                        *v = *v + g;
                    }
                }
                GlobalPoolKind::MeanStd => {
                    let mean = plane.iter().map(|v| v.as_f64()).sum::<f64>() * inv_m;
                    let var = plane
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - mean;
                            d * d
                        })
                        .sum::<f64>()
                        * inv_m;
                    let std = (var + STATS_EPS).sqrt();
                    let d_std = dy[ni * cols + c + ci].as_f64();
                    // d std / d x_i = (x_i - mean) / (m * std); the mean term
                    // distributes uniformly.
                    for (i, v) in plane.iter().enumerate() {
                        let g = d_mean * inv_m + d_std * (v.as_f64() - mean) * inv_m / std;
                        dx[base + i] = dx[base + i] + T::from_f64(g);
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_hand_example() {
        // 4x4 plane 0..15, 2x2 stride 2: maxima are 5, 7, 13, 15.
        let x = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let y = pool2d(&x, PoolKind::Max, 2, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn max_pool_tie_takes_first_in_row_major_order() {
        let x = Tensor::<f64>::filled(&[1, 1, 2, 2], 7.0);
        let (y, cache) = pool2d_cached(&x, PoolKind::Max, 2, 2, 0).unwrap();
        assert_eq!(y.data(), &[7.0]);
        // All four candidates tie at 7; position (0,0) must win.
        let dy = Tensor::<f64>::filled(&[1, 1, 1, 1], 1.0);
        let dx = pool2d_backward(&[1, 1, 2, 2], PoolKind::Max, 2, 2, 0, &cache, &dy).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stem_pool_shape_3x3_stride2_pad1() {
        // The residual stems use 3x3 stride-2 pad-1 max pooling: 129x200
        // (spectrogram after the stem conv) -> 65x100.
        let x = Tensor::<f32>::zeros(&[1, 4, 129, 200]);
        let y = pool2d(&x, PoolKind::Max, 3, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 65, 100]);
    }

    #[test]
    fn avg_pool_divides_by_full_window_area_including_padding() {
        // Single pixel of value 8, 3x3 window stride 2 pad 1: every window
        // sum is divided by 9 even at the corners.
        let x = Tensor::<f64>::new(vec![1, 1, 1, 1], vec![8.0]).unwrap();
        let y = pool2d(&x, PoolKind::Avg, 3, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert!((y.data()[0] - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn avg_pool_backward_spreads_uniformly() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 2, 2], |i| i as f64);
        let (_, cache) = pool2d_cached(&x, PoolKind::Avg, 2, 1, 0).unwrap();
        let dy = Tensor::<f64>::new(vec![1, 1, 1, 1], vec![4.0]).unwrap();
        let dx = pool2d_backward(&[1, 1, 2, 2], PoolKind::Avg, 2, 1, 0, &cache, &dy).unwrap();
        assert_eq!(dx.data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn global_avg_pool_values() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64);
        let y = global_pool(&x, GlobalPoolKind::Avg).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[1.5, 5.5]);
    }

    #[test]
    fn global_mean_std_layout_and_values() {
        // Channel 0: constant 3 -> std = sqrt(eps); channel 1: {0,2} -> mean
        // 1, var 1.
        let x = Tensor::<f64>::new(vec![1, 2, 1, 2], vec![3.0, 3.0, 0.0, 2.0]).unwrap();
        let y = global_pool(&x, GlobalPoolKind::MeanStd).unwrap();
        assert_eq!(y.shape(), &[1, 4]);
        assert!((y.data()[0] - 3.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
        assert!((y.data()[2] - STATS_EPS.sqrt()).abs() < 1e-12);
        assert!((y.data()[3] - (1.0 + STATS_EPS).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn padding_must_stay_below_kernel() {
        let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        assert!(pool2d(&x, PoolKind::Max, 2, 2, 2).is_err());
    }
}
