//! Softmax cross-entropy over class logits, the training loss for the
//! two-class (spoof = 0, bonafide = 1) detection task.
//!
//! Computed via the stable log-softmax: `log p_k = z_k - max(z) -
//! log(sum(exp(z - max(z))))`; the loss is the mean negative log-likelihood
//! over the batch, and the logit gradient is `(softmax - onehot) / N`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise log-softmax of `[N,K]` logits.
pub fn log_softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(Error::config(format!(
            "log_softmax: logits must be [N,K], got {:?}",
            logits.shape()
        )));
    }
    let (n, k) = (logits.dim(0), logits.dim(1));
    if k == 0 {
        return Err(Error::config("log_softmax: zero classes"));
    }
    let z = logits.data();
    let mut out = Tensor::zeros(&[n, k]);
    let o = out.data_mut();
    for ni in 0..n {
        let row = &z[ni * k..(ni + 1) * k];
        let max = row
            .iter()
            .map(|v| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row
            .iter()
            .map(|v| (v.as_f64() - max).exp())
            .sum::<f64>()
            .ln();
        for ki in 0..k {
            o[ni * k + ki] = T::from_f64(row[ki].as_f64() - max - log_sum);
        }
    }
    Ok(out)
}

/// Mean cross-entropy of integer labels under the logits. Returns the loss
/// and the log-probabilities (needed both for scoring and for the backward
/// pass).
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let log_probs = log_softmax(logits)?;
    let (n, k) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return Err(Error::config(format!(
            "softmax_xent: {} labels for {} rows",
            labels.len(),
            n
        )));
    }
    if n == 0 {
        return Err(Error::config("softmax_xent: empty batch"));
    }
    let mut loss = 0.0f64;
    for (ni, &lab) in labels.iter().enumerate() {
        if lab >= k {
            return Err(Error::config(format!(
                "softmax_xent: label {lab} out of range for {k} classes"
            )));
        }
        loss -= log_probs.at2(ni, lab).as_f64();
    }
    Ok((T::from_f64(loss / n as f64), log_probs))
}

/// Gradient of [`softmax_xent`] with respect to the logits:
/// `(exp(log_probs) - onehot(labels)) / N`.
pub fn softmax_xent_backward<T: Scalar>(
    log_probs: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>> {
    let (n, k) = (log_probs.dim(0), log_probs.dim(1));
    if labels.len() != n {
        return Err(Error::config("softmax_xent_backward: label count mismatch"));
    }
    let inv_n = 1.0 / n as f64;
    let lp = log_probs.data();
    let mut grad = Tensor::zeros(&[n, k]);
    let g = grad.data_mut();
    for ni in 0..n {
        for ki in 0..k {
            let p = lp[ni * k + ki].as_f64().exp();
            let t = if labels[ni] == ki { 1.0 } else { 0.0 };
            g[ni * k + ki] = T::from_f64((p - t) * inv_n);
        }
    }
    Ok(grad)
}
