//! 2-D batch normalization over `[N,C,H,W]`: each channel is normalized by
//! statistics taken over the batch and both spatial axes, then scaled and
//! shifted by learned per-channel `gamma`/`beta`.
//!
//! Conventions (also what the running statistics store):
//! - population (biased) variance, both for normalization and the running
//!   estimate;
//! - train mode normalizes by batch statistics, eval mode by running
//!   statistics;
//! - train mode expects `N*H*W >= 2` for meaningful statistics. With a
//!   single element the output degenerates to `beta` and its input gradient
//!   to zero; this is numerically consistent (and exercised by tiny
//!   gradient-check models), so it is documented rather than rejected.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default variance epsilon.
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch statistics from a training-mode forward pass, used by
/// the layer to update its running estimates.
#[derive(Debug, Clone)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Forward-pass state needed by [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    /// Normalized input, same layout as the input tensor.
    xhat: Vec<T>,
    /// Per-channel `1/sqrt(var + eps)` actually used in the forward pass.
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    /// Whether the statistics were batch statistics (train) or running
    /// statistics (eval); the input gradient differs between the two.
    train: bool,
}

fn check_bn_args<T: Scalar>(input: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<()> {
    if input.rank() != 4 {
        return Err(Error::config(format!(
            "batchnorm: input must be [N,C,H,W], got {:?}",
            input.shape()
        )));
    }
    let c = input.dim(1);
    if gamma.len() != c || beta.len() != c {
        return Err(Error::config(format!(
            "batchnorm: gamma/beta length {}/{} != channels {}",
            gamma.len(),
            beta.len(),
            c
        )));
    }
    Ok(())
}

/// Per-channel iteration helper: calls `f` with the flat index of every
/// element of channel `c`.
#[inline]
fn for_channel(n: usize, c_total: usize, plane: usize, c: usize, mut f: impl FnMut(usize)) {
    for ni in 0..n {
        let base = (ni * c_total + c) * plane;
        for i in base..base + plane {
            f(i);
        }
    }
}

/// Training forward: normalize by batch mean/variance.
pub fn batchnorm_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> Result<(Tensor<T>, BnStats<T>, BnCache<T>)> {
    check_bn_args(input, gamma, beta)?;
    let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let plane = h * w;
    let m = (n * plane) as f64;
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![0.0f64; c];
    let mut stats = BnStats {
        mean: vec![T::zero(); c],
        var: vec![T::zero(); c],
    };

    for ci in 0..c {
        let mut sum = 0.0f64;
        for_channel(n, c, plane, ci, |i| sum += x[i].as_f64());
        let mean = sum / m;
        let mut sq = 0.0f64;
        for_channel(n, c, plane, ci, |i| {
            let d = x[i].as_f64() - mean;
            sq += d * d;
        });
        let var = sq / m;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[ci] = istd;
        stats.mean[ci] = T::from_f64(mean);
        stats.var[ci] = T::from_f64(var);
        let g = gamma[ci].as_f64();
        let b = beta[ci].as_f64();
        let o = out.data_mut();
        for_channel(n, c, plane, ci, |i| {
            let xh = (x[i].as_f64() - mean) * istd;
            xhat[i] = T::from_f64(xh);
            o[i] = T::from_f64(g * xh + b);
        });
    }
    let cache = BnCache {
        xhat,
        inv_std,
        shape: input.shape().to_vec(),
        train: true,
    };
    Ok((out, stats, cache))
}

/// Inference forward: normalize by the provided running statistics.
pub fn batchnorm_eval<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<(Tensor<T>, BnCache<T>)> {
    check_bn_args(input, gamma, beta)?;
    let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::config("batchnorm: running stats length mismatch"));
    }
    let plane = h * w;
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![0.0f64; c];
    for ci in 0..c {
        let mean = running_mean[ci].as_f64();
        let var = running_var[ci].as_f64();
        if var < 0.0 {
            return Err(Error::numeric("batchnorm: negative running variance"));
        }
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[ci] = istd;
        let g = gamma[ci].as_f64();
        let b = beta[ci].as_f64();
        let o = out.data_mut();
        for_channel(n, c, plane, ci, |i| {
            let xh = (x[i].as_f64() - mean) * istd;
            xhat[i] = T::from_f64(xh);
            o[i] = T::from_f64(g * xh + b);
        });
    }
    let cache = BnCache {
        xhat,
        inv_std,
        shape: input.shape().to_vec(),
        train: false,
    };
    Ok((out, cache))
}

/// Gradients with respect to input, gamma and beta.
///
/// Train mode accounts for the dependence of the batch statistics on the
/// input; eval mode treats the running statistics as constants.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    if grad_out.shape() != &cache.shape[..] {
        return Err(Error::config(format!(
            "batchnorm_backward: grad shape {:?}, expected {:?}",
            grad_out.shape(),
            cache.shape
        )));
    }
    let (n, c, h, w) = (cache.shape[0], cache.shape[1], cache.shape[2], cache.shape[3]);
    if gamma.len() != c {
        return Err(Error::config("batchnorm_backward: gamma length mismatch"));
    }
    let plane = h * w;
    let m = (n * plane) as f64;
    let dy = grad_out.data();
    let xhat = &cache.xhat;
    let mut grad_in = Tensor::zeros(&cache.shape);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];

    for ci in 0..c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for_channel(n, c, plane, ci, |i| {
            let g = dy[i].as_f64();
            sum_dy += g;
            sum_dy_xhat += g * xhat[i].as_f64();
        });
        dgamma[ci] = T::from_f64(sum_dy_xhat);
        dbeta[ci] = T::from_f64(sum_dy);

        let g_istd = gamma[ci].as_f64() * cache.inv_std[ci];
        let dx = grad_in.data_mut();
        if cache.train {
            let mean_dy = sum_dy / m;
            let mean_dy_xhat = sum_dy_xhat / m;
            for_channel(n, c, plane, ci, |i| {
                let v = g_istd * (dy[i].as_f64() - mean_dy - xhat[i].as_f64() * mean_dy_xhat);
                dx[i] = T::from_f64(v);
            });
        } else {
            for_channel(n, c, plane, ci, |i| {
                dx[i] = T::from_f64(g_istd * dy[i].as_f64());
            });
        }
    }
    Ok((grad_in, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// With zero-mean unit-variance input per channel, identity gamma and
    /// zero beta, train-mode batch norm is (up to the epsilon) the identity.
    #[test]
    fn normalized_input_passes_through() {
        // Channel values {-1, 1} repeated: mean 0, population variance 1.
        let x = Tensor::<f64>::from_fn(&[2, 1, 1, 2], |i| if i % 2 == 0 { -1.0 } else { 1.0 });
        let (y, stats, _) = batchnorm_train(&x, &[1.0], &[0.0], BN_EPS).unwrap();
        assert!((stats.mean[0] - 0.0).abs() < 1e-15);
        assert!((stats.var[0] - 1.0).abs() < 1e-15);
        for (a, b) in y.data().iter().zip(x.data()) {
            // Off only by the 1/sqrt(1+eps) factor.
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| (i * i) as f64);
        let (y, stats, _) = batchnorm_train(&x, &[1.0, 1.0], &[0.0, 0.0], BN_EPS).unwrap();
        // Output channel statistics: mean ~0, variance ~1.
        for ci in 0..2 {
            let vals: Vec<f64> = (0..4).map(|i| y.data()[ci * 4 + i]).collect();
            let mean = vals.iter().sum::<f64>() / 4.0;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // off by eps shrinkage only
        }
        // Batch stats are population statistics of the raw input.
        assert!((stats.mean[0] - (0.0 + 1.0 + 4.0 + 9.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_beta_scale_and_shift() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 1, 2], |i| i as f64);
        let (y, _, _) = batchnorm_train(&x, &[2.0], &[10.0], BN_EPS).unwrap();
        // xhat = {-1, 1} (population var of {0,1} is 0.25, inv_std ~ 2).
        assert!((y.data()[0] - (10.0 - 2.0)).abs() < 1e-4);
        assert!((y.data()[1] - (10.0 + 2.0)).abs() < 1e-4);
    }

    #[test]
    fn eval_uses_running_statistics() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 1, 3], |i| i as f64);
        // Fresh-layer convention: mean 0, var 1 -> output = gamma*x + beta
        // up to eps.
        let (y, _) = batchnorm_eval(&x, &[3.0], &[1.0], &[0.0], &[1.0], 0.0).unwrap();
        assert_eq!(y.data(), &[1.0, 4.0, 7.0]);
        // Non-trivial stats.
        let (y2, _) = batchnorm_eval(&x, &[1.0], &[0.0], &[1.0], &[4.0], 0.0).unwrap();
        assert_eq!(y2.data(), &[-0.5, 0.0, 0.5]);
    }

    #[test]
    fn backward_beta_and_gamma_are_reductions() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 1, 4], |i| i as f64);
        let (_, _, cache) = batchnorm_train(&x, &[1.0], &[0.0], BN_EPS).unwrap();
        let dy = Tensor::<f64>::filled(&[1, 1, 1, 4], 1.0);
        let (dx, dgamma, dbeta) = batchnorm_backward(&cache, &[1.0], &dy).unwrap();
        assert!((dbeta[0] - 4.0).abs() < 1e-12);
        // Sum of xhat over the batch is 0, so dgamma for uniform dy is ~0,
        // and so is dx (uniform dy is entirely explained by the mean shift).
        assert!(dgamma[0].abs() < 1e-10);
        for v in dx.data() {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_mismatched_gamma() {
        let x = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        assert!(batchnorm_train(&x, &[1.0; 2], &[0.0; 3], BN_EPS).is_err());
    }
}
